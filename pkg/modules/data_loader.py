"""
データ読み込みモジュール

選好データセット（JSONL + メタデータ）、外部埋め込み、実験結果CSVの読み書きを担当します。

データセットの形式:
- `<name>.jsonl`: 1行1点 `{"b": float, "id": int, "phi": [float, ...], "s": 0|1|null}`
- `<name>.meta.json`: 次元d、点数N、生成設定、シード、β、θ*などのメタデータ

どちらもキーをソートし、浮動小数は往復可能な最短表現で書き出すため、
同じ入力からは同じバイト列になります。
"""

import csv
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
import streamlit as st

from .datagen import GroundTruth
from .errors import InvalidInputError, ResultsParseError
from .model import MISSING_FEEDBACK, PreferenceDataset

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

DATASET_SCHEMA_VERSION = 1
RESULTS_SCHEMA_VERSION = 1
RESULTS_SCHEMA_LINE = f"# schema_version: {RESULTS_SCHEMA_VERSION}"

# 結果CSVの列（順序固定）
RESULT_COLUMNS = [
    'algorithm',
    'seed',
    'budget',
    'max_logit_error',
    'mean_logit_error',
    'error_rate',
    'wall_time_ms',
    'fingerprint',
    'kappa',
]

_INT_COLUMNS = ('seed', 'budget')
_FLOAT_COLUMNS = ('max_logit_error', 'mean_logit_error', 'error_rate', 'wall_time_ms')


def meta_path_for(path: PathLike) -> Path:
    """
    データセットに対応するメタデータのパス

    Examples:
        >>> meta_path_for('data/desk.jsonl')
        PosixPath('data/desk.meta.json')
    """
    path = Path(path)
    return path.with_name(f"{path.stem}.meta.json")


def _read_jsonl(path: PathLike) -> List[Dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"ファイルが見つかりません: {path}")

    records = []
    with open(path, 'r', encoding='utf-8') as f:
        for line_number, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise InvalidInputError(f"JSONの形式が不正です: {path} {line_number}行目 ({e})")
    if not records:
        raise InvalidInputError(f"データが1行もありません: {path}")
    return records


def save_dataset(
    dataset: PreferenceDataset,
    path: PathLike,
    truth: Optional[GroundTruth] = None,
    meta: Optional[Dict[str, Any]] = None
) -> Path:
    """
    データセットをJSONLで保存し、メタデータを `<stem>.meta.json` に書き出す

    Args:
        dataset: 保存するデータセット
        path: 出力先（.jsonl）
        truth: 生成時の真値（θ*などをメタデータに含める）
        meta: 追加のメタデータ（生成設定、βなど）

    Returns:
        Path: メタデータのパス
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        for i in range(len(dataset)):
            s = int(dataset.feedback[i])
            record = {
                'id': i,
                'phi': dataset.phi[i].tolist(),
                'b': float(dataset.bias[i]),
                's': None if s == MISSING_FEEDBACK else s,
            }
            f.write(json.dumps(record, sort_keys=True) + "\n")

    payload: Dict[str, Any] = dict(meta or {})
    payload['N'] = len(dataset)
    payload['d'] = dataset.dim
    if truth is not None:
        payload['theta_star'] = truth.theta_star.theta.tolist()
        payload['theta_bar'] = truth.theta_bar.tolist()
        payload['theta_ref'] = truth.theta_ref.tolist()
        payload['sigma_bar'] = truth.sigma_bar.tolist()

    meta_path = meta_path_for(path)
    with open(meta_path, 'w', encoding='utf-8', newline='\n') as f:
        f.write(json.dumps(payload, sort_keys=True, indent=2) + "\n")

    logger.info("データセットを保存しました: %s (N=%d, d=%d)", path, len(dataset), dataset.dim)
    return meta_path


def load_dataset(path: PathLike) -> Tuple[PreferenceDataset, Dict[str, Any]]:
    """
    JSONLのデータセットとメタデータを読み込む

    Args:
        path: データセットのパス（.jsonl）

    Returns:
        (dataset, metadata): メタデータがなければ空のdict

    Raises:
        FileNotFoundError: ファイルが存在しない場合
        InvalidInputError: idが0..N−1の順でない、または形式が不正な場合
    """
    records = _read_jsonl(path)

    ids = [r.get('id') for r in records]
    if ids != list(range(len(records))):
        raise InvalidInputError(f"idが0..N−1の順に並んでいません: {path}")

    try:
        phi = np.array([r['phi'] for r in records], dtype=np.float64)
        bias = np.array([r['b'] for r in records], dtype=np.float64)
    except (KeyError, ValueError) as e:
        raise InvalidInputError(f"データセットの形式が不正です: {path} ({e})")
    feedback = np.array(
        [MISSING_FEEDBACK if r.get('s') is None else r['s'] for r in records]
    )
    dataset = PreferenceDataset(phi, bias, feedback)

    metadata: Dict[str, Any] = {}
    meta_path = meta_path_for(path)
    if meta_path.exists():
        with open(meta_path, 'r', encoding='utf-8') as f:
            metadata = json.load(f)
    else:
        logger.warning("メタデータが見つかりません: %s", meta_path)

    return dataset, metadata


def load_phi_rows(path: PathLike) -> np.ndarray:
    """
    外部で計算した特徴量差を読み込む（1行 `{"phi": [...]}`）

    Raises:
        InvalidInputError: 行ごとに次元が異なる場合
    """
    records = _read_jsonl(path)
    try:
        rows = [r['phi'] for r in records]
    except KeyError:
        raise InvalidInputError(f"phiのない行があります: {path}")
    dims = {len(row) for row in rows}
    if len(dims) != 1:
        raise InvalidInputError(f"phiの次元が揃っていません: {sorted(dims)}")
    return np.array(rows, dtype=np.float64)


def load_class_features(path: PathLike) -> Tuple[np.ndarray, np.ndarray]:
    """
    分類用の特徴量とラベルを読み込む（1行 `{"x": [...], "label": int}`）

    Returns:
        (features, labels): (M, d) の特徴量と長さMのラベル
    """
    records = _read_jsonl(path)
    try:
        features = np.array([r['x'] for r in records], dtype=np.float64)
        labels = np.array([int(r['label']) for r in records])
    except (KeyError, ValueError, TypeError) as e:
        raise InvalidInputError(f"特徴量ファイルの形式が不正です: {path} ({e})")
    if features.ndim != 2:
        raise InvalidInputError(f"特徴量の次元が揃っていません: {path}")
    return features, labels


def _parse_float(text: str, column: str, line_number: int) -> float:
    if text == '':
        if column == 'kappa':
            return math.nan
        raise ResultsParseError(f"値が空です（{column}）", line_number)
    try:
        return float(text)
    except ValueError:
        raise ResultsParseError(f"数値に変換できません（{column}={text}）", line_number)


def load_results(path: PathLike) -> pd.DataFrame:
    """
    実験結果CSVを読み込み、形式を検証する

    1行目はスキーマ版数のコメント、2行目はヘッダーです。

    Args:
        path: 結果CSVのパス

    Returns:
        pd.DataFrame: RESULT_COLUMNSの列を持つ結果

    Raises:
        FileNotFoundError: ファイルが存在しない場合
        ResultsParseError: 形式が不正な場合（行番号付き）
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"結果ファイルが見つかりません: {path}")

    with open(path, 'r', encoding='utf-8', newline='') as f:
        lines = f.read().splitlines()

    if not lines or lines[0].strip() != RESULTS_SCHEMA_LINE:
        raise ResultsParseError(f"スキーマ版数の行がありません（期待値 '{RESULTS_SCHEMA_LINE}'）", 1)

    reader = csv.reader(lines[1:])
    try:
        header = next(reader)
    except StopIteration:
        raise ResultsParseError("ヘッダー行がありません", 2)
    if header != RESULT_COLUMNS:
        raise ResultsParseError(f"ヘッダーが一致しません: {header}", 2)

    records = []
    for line_number, row in enumerate(reader, start=3):
        if not row:
            continue
        if len(row) != len(RESULT_COLUMNS):
            raise ResultsParseError(
                f"列数が一致しません（{len(row)} != {len(RESULT_COLUMNS)}）", line_number
            )
        record: Dict[str, Any] = dict(zip(RESULT_COLUMNS, row))
        if not record['algorithm']:
            raise ResultsParseError("algorithmが空です", line_number)
        for column in _INT_COLUMNS:
            try:
                record[column] = int(record[column])
            except ValueError:
                raise ResultsParseError(f"整数に変換できません（{column}={record[column]}）", line_number)
        for column in _FLOAT_COLUMNS + ('kappa',):
            record[column] = _parse_float(record[column], column, line_number)
        records.append(record)

    if not records:
        raise ResultsParseError("データ行がありません", len(lines))

    return pd.DataFrame.from_records(records, columns=RESULT_COLUMNS)


def find_results_files(results_dir: PathLike = "results") -> List[Path]:
    """
    ディレクトリ以下の結果CSVを探す

    Returns:
        list: `results.csv` のパス（ソート済み、ディレクトリがなければ空）
    """
    results_path = Path(results_dir)
    if not results_path.exists():
        return []
    return sorted(results_path.rglob("results.csv"))


@st.cache_data(ttl=None)  # アプリ起動中ずっと保持
def load_results_cached(path: str) -> pd.DataFrame:
    """
    結果CSVを読み込む（Streamlitキャッシュ版）

    Args:
        path: 結果CSVのパス

    Returns:
        pd.DataFrame: 結果
    """
    return load_results(path)
