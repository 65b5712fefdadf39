"""
例外定義モジュール

ライブラリ全体で使用する例外クラスを定義します。
CLIは例外の種類から終了コードを決定します（数値計算の失敗=3、それ以外=2）。
"""

from typing import Iterable, Optional


class ActiveDPOError(Exception):
    """本パッケージの例外の基底クラス"""


class InvalidInputError(ActiveDPOError, ValueError):
    """入力値・設定値が不正な場合の例外"""


class FeedbackMissingError(InvalidInputError):
    """フィードバックが必要な点にフィードバックが存在しない場合の例外"""

    def __init__(self, indices: Iterable[int]):
        self.indices = sorted(int(i) for i in indices)
        preview = self.indices[:10]
        suffix = " ..." if len(self.indices) > 10 else ""
        super().__init__(f"フィードバックが存在しません: {preview}{suffix}")


class ContractViolationError(ActiveDPOError):
    """呼び出し規約違反（同一点へのフィードバック二重問い合わせ等）"""


class NumericalFailureError(ActiveDPOError):
    """最適化・行列計算が数値的に破綻した場合の例外"""

    def __init__(self, message: str, iterations: Optional[int] = None):
        self.iterations = iterations
        if iterations is not None:
            message = f"{message}（反復 {iterations} 回目）"
        super().__init__(message)


class ResultsParseError(InvalidInputError):
    """結果CSVの形式が不正な場合の例外"""

    def __init__(self, message: str, line_number: Optional[int] = None):
        self.line_number = line_number
        if line_number is not None:
            message = f"{message}: {line_number}行目"
        super().__init__(message)
