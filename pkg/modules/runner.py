"""
実験実行モジュール

データセット生成、予算×手法×シードの実験、結果の集計とレポート出力を担当します。

1つの (手法, シード) について選択を最大予算まで1回だけ実行し、
小さい予算はその先頭部分 Sₙ を使います（貪欲選択の列は入れ子になるため）。
θ̂ₙ は予算ごとに Sₙ 上で推定し直し、全N点でθ*と比較します。
"""

import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .config import DEFAULT_POOL_SIZE, FitOptions, ModelConfig, SelectionConfig
from .data_loader import (
    DATASET_SCHEMA_VERSION,
    load_class_features,
    load_dataset,
    load_phi_rows,
    load_results,
    save_dataset,
)
from .datagen import GeneratorSpec, generate, oracle_policy
from .errors import ContractViolationError, InvalidInputError
from .exporter import (
    export_to_csv,
    export_to_excel,
    render_summary_text,
    save_chart,
    write_results_csv,
)
from .metrics import evaluate
from .model import Policy, PreferenceDataset, normalize_dataset
from .selection import (
    ALGORITHMS,
    ONLINE_ALGORITHMS,
    VECTOR_KINDS,
    FeedbackOracle,
    empirical_kappa,
    run_selection,
)
from .solver import fit_dpo
from .visualizer import METRICS, create_metric_chart

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

# 既定の予算 2⁵..2¹²
DEFAULT_BUDGETS = tuple(2 ** k for k in range(5, 13))


def parse_budgets(text: str) -> Tuple[int, ...]:
    """
    予算の指定を解釈

    カンマ区切り（"32,64,128"）または "pow2:lo:hi"（2^lo〜2^hi）を受け付けます。

    Raises:
        InvalidInputError: 形式が不正な場合

    Examples:
        >>> parse_budgets('pow2:5:7')
        (32, 64, 128)
        >>> parse_budgets('100,10')
        (10, 100)
    """
    text = text.strip()
    try:
        if text.startswith('pow2:'):
            _, lo, hi = text.split(':')
            lo, hi = int(lo), int(hi)
            if lo < 0 or hi < lo:
                raise InvalidInputError(f"pow2の範囲が不正です: {text}")
            budgets = [2 ** k for k in range(lo, hi + 1)]
        else:
            budgets = [int(part) for part in text.split(',') if part.strip()]
    except ValueError:
        raise InvalidInputError(f"予算の指定を解釈できません: {text}")
    if not budgets:
        raise InvalidInputError(f"予算が指定されていません: {text}")
    return tuple(sorted(set(budgets)))


def parse_seeds(text: str) -> Tuple[int, ...]:
    """
    シードの指定を解釈

    カンマ区切り（"0,1,2"）または "lo:hi"（lo以上hi未満）を受け付けます。

    Examples:
        >>> parse_seeds('0:3')
        (0, 1, 2)
    """
    text = text.strip()
    try:
        if ':' in text:
            lo, hi = (int(part) for part in text.split(':'))
            seeds = list(range(lo, hi))
        else:
            seeds = [int(part) for part in text.split(',') if part.strip()]
    except ValueError:
        raise InvalidInputError(f"シードの指定を解釈できません: {text}")
    if not seeds:
        raise InvalidInputError(f"シードが指定されていません: {text}")
    return tuple(seeds)


@dataclass(frozen=True)
class ExperimentPlan:
    """
    実験計画

    Attributes:
        dataset_path: データセット（.jsonl）のパス
        algorithms: 実行する手法
        budgets: 予算（昇順）
        seeds: シード
        selection: 選択設定（budgetは最大予算、rng_seedはセルごとに上書き）
        output_dir: 出力ディレクトリ
        jobs: 並列実行するプロセス数
        kappa: 経験的κを計算するか
        timing: 実行時間を記録するか（記録しない場合は0）
    """
    dataset_path: Path
    algorithms: Tuple[str, ...]
    budgets: Tuple[int, ...] = DEFAULT_BUDGETS
    seeds: Tuple[int, ...] = (0,)
    selection: SelectionConfig = field(default_factory=lambda: SelectionConfig(budget=DEFAULT_BUDGETS[-1]))
    output_dir: Path = Path('results')
    jobs: int = 1
    kappa: bool = False
    timing: bool = False

    def __post_init__(self):
        if not self.algorithms:
            raise InvalidInputError("手法が指定されていません")
        unknown = [a for a in self.algorithms if a not in ALGORITHMS]
        if unknown:
            raise InvalidInputError(f"不明な手法です: {unknown}")
        if not self.budgets:
            raise InvalidInputError("予算が指定されていません")
        if list(self.budgets) != sorted(set(self.budgets)) or self.budgets[0] < 1:
            raise InvalidInputError(f"予算は正の整数の昇順である必要があります: {self.budgets}")
        if not self.seeds:
            raise InvalidInputError("シードが指定されていません")
        if self.jobs < 1:
            raise InvalidInputError(f"jobsは1以上である必要があります: {self.jobs}")

    @property
    def model(self) -> ModelConfig:
        return self.selection.model

    @property
    def max_budget(self) -> int:
        return self.budgets[-1]

    def to_dict(self) -> Dict[str, Any]:
        payload = asdict(self)
        payload['dataset_path'] = str(self.dataset_path)
        payload['output_dir'] = str(self.output_dir)
        payload['fingerprint'] = self.selection.fingerprint()
        return payload


@dataclass(frozen=True)
class ResultRow:
    """(手法, シード, 予算) ごとの評価結果"""
    algorithm: str
    seed: int
    budget: int
    max_logit_error: float
    mean_logit_error: float
    error_rate: float
    wall_time_ms: float
    fingerprint: str
    kappa: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def resolve_theta_star(
    dataset: PreferenceDataset,
    metadata: Dict[str, Any],
    model: ModelConfig,
    fit: FitOptions
) -> Policy:
    """
    メタデータのθ*を使う。βまたは制約半径が異なる場合は全データで推定し直す

    Raises:
        FeedbackMissingError: 推定し直す必要があるのにフィードバックがない場合
    """
    same_beta = metadata.get('beta') == model.beta
    same_radius = metadata.get('constraint_radius') == fit.constraint_radius
    if 'theta_star' in metadata and same_beta and same_radius:
        theta = np.asarray(metadata['theta_star'], dtype=np.float64)
        if theta.shape != (dataset.dim,):
            raise InvalidInputError(f"θ*の次元が一致しません: {theta.shape} != ({dataset.dim},)")
        return Policy(theta)

    logger.info(
        "θ*を推定し直します: beta=%s (メタデータ %s), radius=%s",
        model.beta, metadata.get('beta'), fit.constraint_radius
    )
    return oracle_policy(dataset, model, fit)


def run_cell(
    plan: ExperimentPlan,
    dataset: PreferenceDataset,
    theta_star: Policy,
    algorithm: str,
    seed: int
) -> List[ResultRow]:
    """
    1つの (手法, シード) を最大予算まで実行し、予算ごとの評価行を返す

    オンライン手法はフィードバックを隠したデータセットとオラクルで実行します。

    Raises:
        ContractViolationError: オラクルの問い合わせ記録が予算と一致しない場合
    """
    sel = plan.selection.with_seed(seed).with_budget(plan.max_budget)
    fingerprint = sel.fingerprint()

    started = time.perf_counter()
    if algorithm in ONLINE_ALGORITHMS:
        oracle = FeedbackOracle.from_dataset(dataset)
        trace = run_selection(algorithm, dataset.without_feedback(), sel, oracle)
        log = oracle.query_log
        if len(log) != sel.budget or len(set(log)) != len(log):
            raise ContractViolationError(
                f"問い合わせ記録が予算と一致しません: {algorithm} {len(log)} != {sel.budget}"
            )
    else:
        trace = run_selection(algorithm, dataset, sel)
    selection_seconds = time.perf_counter() - started

    if plan.kappa and algorithm in VECTOR_KINDS:
        empirical_kappa(dataset, trace)

    rows = []
    policy = None
    for budget in plan.budgets:
        started = time.perf_counter()
        report = fit_dpo(dataset, trace.prefix(budget), sel.model, sel.fit, init=policy)
        if not report.converged:
            logger.warning(
                "θ̂の推定が収束しませんでした: %s seed=%d n=%d grad=%.3e",
                algorithm, seed, budget, report.final_grad_norm
            )
        policy = report.policy
        metrics = evaluate(dataset, policy, theta_star, sel.model.beta, n_used=budget)
        elapsed_ms = (selection_seconds + time.perf_counter() - started) * 1000.0

        rows.append(ResultRow(
            algorithm=algorithm,
            seed=seed,
            budget=budget,
            max_logit_error=metrics.max_logit_error,
            mean_logit_error=metrics.mean_logit_error,
            error_rate=metrics.error_rate,
            wall_time_ms=round(elapsed_ms, 3) if plan.timing else 0.0,
            fingerprint=fingerprint,
            kappa=trace.kappa_estimate,
        ))

    logger.info(
        "完了: %s seed=%d max_logit_error(n=%d)=%.4g",
        algorithm, seed, plan.max_budget, rows[-1].max_logit_error
    )
    return rows


def _run_cell_job(args) -> List[ResultRow]:
    return run_cell(*args)


def run_plan(plan: ExperimentPlan) -> List[ResultRow]:
    """
    実験計画の全セルを実行

    セルの結果は計画の順序（手法→シード→予算）で並べます。

    Raises:
        InvalidInputError: 最大予算がデータ点数を超える場合
    """
    dataset, metadata = load_dataset(plan.dataset_path)
    if plan.max_budget > len(dataset):
        raise InvalidInputError(f"予算がデータ点数を超えています: {plan.max_budget} > {len(dataset)}")
    theta_star = resolve_theta_star(dataset, metadata, plan.model, plan.selection.fit)

    cells = [(plan, dataset, theta_star, a, s) for a in plan.algorithms for s in plan.seeds]
    logger.info(
        "実験を開始します: %d手法 × %dシード, 予算 %s, jobs=%d",
        len(plan.algorithms), len(plan.seeds), list(plan.budgets), plan.jobs
    )

    if plan.jobs > 1:
        with ProcessPoolExecutor(max_workers=plan.jobs) as executor:
            results = list(executor.map(_run_cell_job, cells))
    else:
        results = [_run_cell_job(cell) for cell in cells]

    return [row for rows in results for row in rows]


def _algorithm_order(names) -> List[str]:
    present = set(names)
    ordered = [a for a in ALGORITHMS if a in present]
    return ordered + sorted(present - set(ordered))


def aggregate(results: pd.DataFrame) -> pd.DataFrame:
    """
    シード間で指標を集計（中央値と四分位）

    Args:
        results: load_resultsの出力

    Returns:
        pd.DataFrame: 列: ['algorithm', 'budget', 'metric', 'median', 'q25', 'q75', 'n_seeds']

    Raises:
        InvalidInputError: 結果が空の場合
    """
    if results.empty:
        raise InvalidInputError("集計する結果がありません")

    metrics = list(METRICS)
    if 'kappa' in results.columns and results['kappa'].notna().any():
        metrics.append('kappa')

    frames = []
    for metric in metrics:
        values = results[['algorithm', 'budget', metric]].dropna()
        grouped = values.groupby(['algorithm', 'budget'])[metric]
        frame = pd.DataFrame({
            'median': grouped.median(),
            'q25': grouped.quantile(0.25),
            'q75': grouped.quantile(0.75),
            'n_seeds': grouped.count(),
        }).reset_index()
        frame.insert(2, 'metric', metric)
        frames.append(frame)

    summary = pd.concat(frames, ignore_index=True)
    algorithm_rank = {name: i for i, name in enumerate(_algorithm_order(summary['algorithm']))}
    metric_rank = {name: i for i, name in enumerate(metrics)}
    summary['_metric'] = summary['metric'].map(metric_rank)
    summary['_algorithm'] = summary['algorithm'].map(algorithm_rank)
    summary = summary.sort_values(['_metric', '_algorithm', 'budget'], kind='mergesort')
    return summary.drop(columns=['_metric', '_algorithm']).reset_index(drop=True)


@dataclass
class OrderingCheck:
    """
    手法間の順序関係の確認結果（該当する手法がない項目はNone）

    Attributes:
        adpo_plus_below_uniform: 閾値以上の全予算でADPO⁺の中央値がUniformより小さいか
        adpo_not_above_uniform: 最大2予算でADPOの中央値がUniform以下か
        decreasing: 手法ごとに最大予算の中央値が最小予算より小さいか
        messages: 不成立の詳細
    """
    adpo_plus_below_uniform: Optional[bool] = None
    adpo_not_above_uniform: Optional[bool] = None
    decreasing: Dict[str, bool] = field(default_factory=dict)
    messages: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        checks = [self.adpo_plus_below_uniform, self.adpo_not_above_uniform]
        checks += list(self.decreasing.values())
        return all(c is not False for c in checks)


def check_ordering(
    summary: pd.DataFrame,
    metric: str = 'max_logit_error',
    strict_from: int = 2 ** 9
) -> OrderingCheck:
    """
    集計結果の中央値について、手法間の順序関係を確認

    Args:
        summary: aggregateの出力
        metric: 対象の指標
        strict_from: ADPO⁺ < Uniform を要求する最小予算

    Returns:
        OrderingCheck: 確認結果
    """
    data = summary[summary['metric'] == metric]
    medians = {
        algorithm: group.set_index('budget')['median']
        for algorithm, group in data.groupby('algorithm')
    }
    check = OrderingCheck()

    uniform = medians.get('uniform')
    if uniform is not None and 'adpo_plus' in medians:
        plus = medians['adpo_plus']
        budgets = [b for b in plus.index if b >= strict_from and b in uniform.index]
        if budgets:
            failed = [b for b in budgets if not plus[b] < uniform[b]]
            check.adpo_plus_below_uniform = not failed
            for b in failed:
                check.messages.append(f"n={b}: ADPO⁺ {plus[b]:.4g} ≥ Uniform {uniform[b]:.4g}")

    if uniform is not None and 'adpo' in medians:
        adpo = medians['adpo']
        budgets = sorted(b for b in adpo.index if b in uniform.index)[-2:]
        if budgets:
            failed = [b for b in budgets if adpo[b] > uniform[b]]
            check.adpo_not_above_uniform = not failed
            for b in failed:
                check.messages.append(f"n={b}: ADPO {adpo[b]:.4g} > Uniform {uniform[b]:.4g}")

    for algorithm in _algorithm_order(medians):
        series = medians[algorithm].sort_index()
        if len(series) < 2:
            continue
        first, last = series.iloc[0], series.iloc[-1]
        check.decreasing[algorithm] = bool(last < first)
        if not last < first:
            check.messages.append(
                f"{algorithm}: n={series.index[-1]} の {last:.4g} が n={series.index[0]} の {first:.4g} 以上"
            )

    return check


def cmd_generate(
    spec: GeneratorSpec,
    out_path: PathLike,
    model: Optional[ModelConfig] = None,
    options: Optional[FitOptions] = None,
    features_path: Optional[PathLike] = None,
    phi_path: Optional[PathLike] = None,
    normalize: bool = False
) -> Path:
    """
    データセットを生成してJSONLとメタデータを書き出す

    Args:
        spec: 生成設定
        out_path: 出力先（.jsonl）
        model: θ*推定のモデル設定（βを使用）
        options: θ*推定の最適化設定
        features_path: 分類用特徴量ファイル（class_featuresモード）
        phi_path: 外部で計算した特徴量差のファイル
        normalize: ‖φᵢ‖₂ ≤ 1, |bᵢ| ≤ 1 に変換してからθ*を推定するか

    Returns:
        Path: データセットのパス
    """
    model = model or ModelConfig()
    options = options or FitOptions()

    features = labels = phi_rows = None
    if phi_path is not None:
        phi_rows = load_phi_rows(phi_path)
        spec = replace(spec, n_points=phi_rows.shape[0], dim=phi_rows.shape[1])
        source = 'phi_rows'
    elif features_path is not None:
        features, labels = load_class_features(features_path)
        spec = replace(spec, mode='class_features', dim=features.shape[1])
        source = 'class_features'
    else:
        source = spec.mode

    dataset, truth = generate(spec, model, options, features=features, labels=labels, phi_rows=phi_rows)
    if normalize:
        dataset = normalize_dataset(dataset)
        truth = replace(truth, theta_star=oracle_policy(dataset, model, options))

    meta = {
        'schema_version': DATASET_SCHEMA_VERSION,
        'generator': spec.to_dict(),
        'seed': spec.rng_seed,
        'source': source,
        'beta': model.beta,
        'constraint_radius': options.constraint_radius,
        'normalized': normalize,
        # 指標のロジット誤差はβ倍した値
        'logit_error_includes_beta': True,
    }
    out_path = Path(out_path)
    save_dataset(dataset, out_path, truth, meta)
    return out_path


def cmd_run(plan: ExperimentPlan) -> Path:
    """
    実験計画を実行し、`results.csv` と `run_config.json` を書き出す

    Returns:
        Path: 結果CSVのパス
    """
    rows = run_plan(plan)
    output_dir = Path(plan.output_dir)
    results_path = write_results_csv([row.to_dict() for row in rows], output_dir / 'results.csv')

    with open(output_dir / 'run_config.json', 'w', encoding='utf-8', newline='\n') as f:
        f.write(json.dumps(plan.to_dict(), sort_keys=True, indent=2) + "\n")
    return results_path


@dataclass
class ReportOutputs:
    """レポート出力の結果"""
    summary: pd.DataFrame
    text: str
    paths: Dict[str, Any]
    ordering: OrderingCheck


def cmd_report(results_path: PathLike, out_dir: PathLike, excel: bool = False) -> ReportOutputs:
    """
    結果CSVを集計し、集計表とグラフを書き出す

    出力: summary.csv, summary.txt, （excel指定時）summary.xlsx,
    指標ごとの <metric>.html と <metric>.svg

    Raises:
        ResultsParseError: 結果CSVの形式が不正な場合
    """
    results = load_results(results_path)
    summary = aggregate(results)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    paths: Dict[str, Any] = {}
    summary_csv = out_dir / 'summary.csv'
    summary_csv.write_bytes(export_to_csv(summary))
    paths['summary_csv'] = str(summary_csv)

    text = render_summary_text(summary)
    summary_txt = out_dir / 'summary.txt'
    with open(summary_txt, 'w', encoding='utf-8', newline='\n') as f:
        f.write(text)
    paths['summary_txt'] = str(summary_txt)

    if excel:
        summary_xlsx = out_dir / 'summary.xlsx'
        summary_xlsx.write_bytes(export_to_excel(summary))
        paths['summary_xlsx'] = str(summary_xlsx)

    paths['charts'] = {}
    for metric in METRICS:
        fig = create_metric_chart(summary, metric)
        paths['charts'][metric] = save_chart(fig, out_dir / metric)

    ordering = check_ordering(summary)
    for message in ordering.messages:
        logger.info("順序関係: %s", message)
    logger.info("レポートを出力しました: %s", out_dir)
    return ReportOutputs(summary=summary, text=text, paths=paths, ordering=ordering)


def build_plan(
    dataset_path: PathLike,
    algorithms: Sequence[str],
    budgets: Sequence[int] = DEFAULT_BUDGETS,
    seeds: Sequence[int] = (0,),
    model: Optional[ModelConfig] = None,
    fit: Optional[FitOptions] = None,
    pool_size: Optional[int] = DEFAULT_POOL_SIZE,
    refit: str = 'doubling',
    output_dir: PathLike = 'results',
    jobs: int = 1,
    kappa: bool = False,
    timing: bool = False
) -> ExperimentPlan:
    """CLI引数などから実験計画を組み立てる"""
    budgets = tuple(sorted(set(int(b) for b in budgets)))
    selection = SelectionConfig(
        budget=budgets[-1] if budgets else 1,
        pool_size=pool_size,
        refit=refit,
        model=model or ModelConfig(),
        fit=fit or FitOptions(),
    )
    return ExperimentPlan(
        dataset_path=Path(dataset_path),
        algorithms=tuple(dict.fromkeys(algorithms)),
        budgets=budgets,
        seeds=tuple(int(s) for s in seeds),
        selection=selection,
        output_dir=Path(output_dir),
        jobs=jobs,
        kappa=kappa,
        timing=timing,
    )
