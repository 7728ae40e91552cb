"""Plot accuracy-vs-queries curves from a compare.csv produced by `aqpl compare`.

Usage: python docs/plot_curves.py out/compare.csv [curves.png]
"""

import csv
import sys
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def main() -> int:
    src = sys.argv[1] if len(sys.argv) > 1 else "out/compare.csv"
    dst = sys.argv[2] if len(sys.argv) > 2 else "curves.png"
    curves = defaultdict(lambda: ([], [], []))
    with open(src, newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            qs, means, stds = curves[row["strategy"]]
            qs.append(int(row["queries"]))
            means.append(float(row["corrupted_acc_mean"]))
            stds.append(float(row["corrupted_acc_std"]))
    fig, ax = plt.subplots(figsize=(6, 4))
    for strategy, (qs, means, stds) in sorted(curves.items()):
        ax.errorbar(qs, means, yerr=stds, marker="o", markersize=3, capsize=2, label=strategy)
    ax.set_xlabel("queries")
    ax.set_ylabel("corrupted accuracy (mean over severities)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(dst, dpi=150)
    print(f"wrote {dst}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
