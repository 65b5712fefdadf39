"""
コマンドラインインターフェース

サブコマンド:
- generate: 選好データセットを生成
- run: 予算×手法×シードの実験を実行して結果CSVを出力
- report: 結果CSVを集計して集計表とグラフを出力

終了コード: 0=成功、2=入力不正（入出力エラーを含む）、3=数値計算の失敗
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from .config import DEFAULT_POOL_SIZE, REFIT_SCHEDULES, FitOptions, ModelConfig, load_env_defaults
from .datagen import MODES, GeneratorSpec
from .errors import ActiveDPOError, NumericalFailureError
from .runner import (
    DEFAULT_BUDGETS,
    build_plan,
    cmd_generate,
    cmd_report,
    cmd_run,
    parse_budgets,
    parse_seeds,
)
from .selection import ALGORITHMS

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID_INPUT = 2
EXIT_NUMERICAL_FAILURE = 3


def add_model_args(parser: argparse.ArgumentParser) -> argparse.ArgumentParser:
    """β・制約などモデルと推定に共通の引数を追加"""
    parser.add_argument(
        "--beta",
        type=float,
        default=1.0,
        help="DPO正則化係数β（既定: 1.0）",
    )
    parser.add_argument(
        "--constrain-unit-ball",
        action="store_true",
        help="推定を ‖θ‖₂ ≤ 1 に制約する（理論モード）",
    )
    return parser


def build_parser(output_dir: str = "results", jobs: int = 1, log_level: str = "INFO") -> argparse.ArgumentParser:
    """
    引数パーサーを作成

    Args:
        output_dir: --out の既定値（.env の ADPO_OUTPUT_DIR）
        jobs: --jobs の既定値（.env の ADPO_JOBS）
        log_level: --log-level の既定値（.env の ADPO_LOG_LEVEL）
    """
    parser = argparse.ArgumentParser(
        prog="active-dpo",
        description="対数線形ポリシーのDPOに対する能動学習の実験ツール",
    )
    parser.add_argument(
        "--log-level",
        default=log_level,
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help=f"ログレベル（既定: {log_level}）",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    # generate
    gen = subparsers.add_parser("generate", help="選好データセットを生成")
    gen.add_argument("--out", required=True, help="出力先（.jsonl）")
    gen.add_argument("--mode", choices=MODES, default="gaussian", help="特徴量の生成方法")
    gen.add_argument("--n-points", type=int, default=8192, help="点数N（既定: 8192）")
    gen.add_argument("--dim", type=int, default=32, help="次元d（既定: 32）")
    gen.add_argument("--seed", type=int, default=0, help="乱数シード")
    gen.add_argument("--positive-label", type=int, default=None, help="正例ラベル（既定: ランダム）")
    gen.add_argument("--feature-ridge", type=float, default=1.0, help="θ̄推定のリッジ係数")
    source = gen.add_mutually_exclusive_group()
    source.add_argument("--features", default=None, help="分類用特徴量のJSONL（{\"x\", \"label\"}）")
    source.add_argument("--phi", default=None, help="外部で計算した特徴量差のJSONL（{\"phi\"}）")
    gen.add_argument("--normalize", action="store_true", help="‖φᵢ‖₂ ≤ 1, |bᵢ| ≤ 1 に変換")
    add_model_args(gen)

    # run
    run = subparsers.add_parser("run", help="実験を実行")
    run.add_argument("--dataset", required=True, help="データセット（.jsonl）")
    run.add_argument(
        "--algo",
        action="append",
        choices=ALGORITHMS,
        default=None,
        help="手法（複数指定可、既定: 全手法）",
    )
    run.add_argument(
        "--budgets",
        type=parse_budgets,
        default=DEFAULT_BUDGETS,
        help="予算（カンマ区切り または pow2:lo:hi、既定: pow2:5:12）",
    )
    run.add_argument("--seeds", type=parse_seeds, default=(0,), help="シード（カンマ区切り または lo:hi）")
    run.add_argument("--gamma", type=float, default=1.0, help="計画行列のリッジγ（既定: 1.0）")
    run.add_argument("--alpha", type=float, default=3.0, help="UCB幅α（既定: 3.0、0で無効）")
    run.add_argument("--pool", type=int, default=DEFAULT_POOL_SIZE, help=f"候補プールの大きさ（既定: {DEFAULT_POOL_SIZE}）")
    run.add_argument("--no-pool", action="store_true", help="毎ラウンド全候補を評価")
    run.add_argument("--refit", choices=REFIT_SCHEDULES, default="doubling", help="θ̂の再推定スケジュール")
    run.add_argument("--out", default=output_dir, help=f"出力ディレクトリ（既定: {output_dir}）")
    run.add_argument("--jobs", type=int, default=jobs, help="並列プロセス数")
    run.add_argument("--kappa", action="store_true", help="経験的κを計算する")
    run.add_argument("--timing", action="store_true", help="実行時間を記録する")
    add_model_args(run)

    # report
    rep = subparsers.add_parser("report", help="結果を集計してグラフを出力")
    rep.add_argument("--results", required=True, help="結果CSV")
    rep.add_argument("--out", default=None, help="出力ディレクトリ（既定: 結果CSVと同じ場所）")
    rep.add_argument("--excel", action="store_true", help="summary.xlsx も出力する")

    return parser


def _fit_options(args) -> FitOptions:
    return FitOptions(constraint_radius=1.0 if args.constrain_unit_ball else None)


def _generate(args) -> None:
    spec = GeneratorSpec(
        mode=args.mode,
        n_points=args.n_points,
        dim=args.dim,
        positive_label=args.positive_label,
        feature_ridge=args.feature_ridge,
        rng_seed=args.seed,
    )
    path = cmd_generate(
        spec,
        args.out,
        model=ModelConfig(beta=args.beta),
        options=_fit_options(args),
        features_path=args.features,
        phi_path=args.phi,
        normalize=args.normalize,
    )
    print(path)


def _run(args) -> None:
    plan = build_plan(
        dataset_path=args.dataset,
        algorithms=args.algo or ALGORITHMS,
        budgets=args.budgets,
        seeds=args.seeds,
        model=ModelConfig(beta=args.beta, gamma=args.gamma, alpha=args.alpha),
        fit=_fit_options(args),
        pool_size=None if args.no_pool else args.pool,
        refit=args.refit,
        output_dir=args.out,
        jobs=args.jobs,
        kappa=args.kappa,
        timing=args.timing,
    )
    print(cmd_run(plan))


def _report(args) -> None:
    out_dir = args.out or str(Path(args.results).parent)
    outputs = cmd_report(args.results, out_dir, excel=args.excel)
    print(outputs.text, end="")


COMMANDS = {
    "generate": _generate,
    "run": _run,
    "report": _report,
}


def main(argv: Optional[List[str]] = None) -> int:
    """
    CLIのエントリーポイント

    Returns:
        int: 終了コード
    """
    try:
        env = load_env_defaults()
    except ActiveDPOError as e:
        print(f"エラー: {e}", file=sys.stderr)
        return EXIT_INVALID_INPUT

    parser = build_parser(env.output_dir, env.jobs, env.log_level)
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_INVALID_INPUT

    logging.basicConfig(
        level=getattr(logging, args.log_level, logging.INFO),
        format='%(asctime)s - %(levelname)s - %(message)s',
    )

    try:
        COMMANDS[args.command](args)
    except NumericalFailureError as e:
        logger.error("数値計算に失敗しました: %s", e)
        return EXIT_NUMERICAL_FAILURE
    except (ActiveDPOError, OSError) as e:
        logger.error("%s", e)
        return EXIT_INVALID_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
