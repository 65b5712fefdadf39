"""
能動DPO実験ツール - コマンドライン起動スクリプト

使い方:
    python main.py generate --out data/desk.jsonl --seed 7
    python main.py run --dataset data/desk.jsonl --seeds 0:20 --out results/desk
    python main.py report --results results/desk/results.csv
"""

import sys

from modules.cli import main


if __name__ == "__main__":
    sys.exit(main())
