import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[2]))

from modules.data_loader import load_results
from modules.runner import aggregate, check_ordering

results_path = sys.argv[1] if len(sys.argv) > 1 else "results/results.csv"
metric = sys.argv[2] if len(sys.argv) > 2 else "max_logit_error"

summary = aggregate(load_results(results_path))
check = check_ordering(summary, metric=metric)

print("=" * 80)
print(f"手法間の順序関係チェック: {results_path} ({metric})")
print("=" * 80)

data = summary[summary['metric'] == metric]
table = data.pivot(index='budget', columns='algorithm', values='median')
print(table.to_string(float_format=lambda v: f"{v:.4g}"))

print("\n" + "-" * 80)
print(f"ADPO⁺ < Uniform（大きい予算）: {check.adpo_plus_below_uniform}")
print(f"ADPO ≤ Uniform（最大予算）   : {check.adpo_not_above_uniform}")
for algorithm, ok in check.decreasing.items():
    print(f"{algorithm:10s} 予算とともに減少: {ok}")

if check.messages:
    print("\n詳細:")
    for message in check.messages:
        print(f"  - {message}")

print("=" * 80)
print("結果: OK" if check.passed else "結果: NG")
sys.exit(0 if check.passed else 1)
