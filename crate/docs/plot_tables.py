"""Grouped bar chart of a sweep table written by `fltb sweep`.

usage: python docs/plot_tables.py OUT_DIR/table2.csv [chart.png]
"""

import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd


def main(argv):
    if len(argv) < 2:
        sys.exit(__doc__)
    table = pd.read_csv(argv[1], index_col="algorithm", na_values=["ERROR"])
    ax = table.T.plot.bar(figsize=(max(6, 1.2 * len(table.columns)), 4), rot=30)
    ax.set_ylabel("best test accuracy")
    ax.set_ylim(0, 1)
    ax.legend(loc="lower left", fontsize="small")
    plt.tight_layout()
    out = argv[2] if len(argv) > 2 else argv[1].rsplit(".", 1)[0] + ".png"
    plt.savefig(out, dpi=120)
    print(out)


if __name__ == "__main__":
    main(sys.argv)
