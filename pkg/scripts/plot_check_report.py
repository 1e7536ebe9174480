"""
Per-case ratios of one check report.

Reads a <check>.jsonl report written by `hypo verify` and plots the LHS/RHS ratio
of every case with its running maximum, the empirical constant of the check.

The figure is saved next to the report unless --output is given.
"""
import argparse
from pathlib import Path

import matplotlib.pyplot as plt
import numpy as np
import seaborn as sns

from hypokinetic.io_utils import load_report

# Style settings
sns.set_theme(context='paper', style='white')
palette = sns.color_palette("Dark2")
sns.set_palette(palette)
plt.rcParams["figure.figsize"] = (8, 5)


def plot_ratios(cases, title, output):
    """
    Plot case ratios and their running maximum.
    Args:
        cases (pd.DataFrame): Report rows with case, ratio and running_max columns.
        title (str): Check name.
        output (Path): Figure path.
    """
    finite = cases[np.isfinite(cases['ratio'])]
    fig, ax = plt.subplots()
    sns.scatterplot(data=finite, x='case', y='ratio', ax=ax, label='case ratio')
    ax.step(finite['case'], finite['running_max'], where='post', color=palette[1], label='running max')
    if 'valid' in cases.columns and not cases['valid'].all():
        invalid = finite[~finite['valid'].astype(bool)]
        ax.scatter(invalid['case'], invalid['ratio'], marker='x', color='red', label='residual gate')
    ax.set_xlabel('Case')
    ax.set_ylabel('LHS / RHS')
    ax.set_title(f'{title}: constant {finite["ratio"].max():.4g}', fontweight='bold')
    ax.legend()
    sns.despine()
    plt.tight_layout()
    output.parent.mkdir(parents=True, exist_ok=True)
    plt.savefig(output)
    plt.close(fig)
    print(f"Ratio plot saved to: {output}")


def main(report_path, output):
    try:
        cases = load_report(report_path)
    except FileNotFoundError as e:
        print(e)
        return
    report_path = Path(report_path)
    output = Path(output) if output else report_path.with_suffix('.png')
    plot_ratios(cases, report_path.stem, output)


if __name__ == "__main__":
    args = argparse.ArgumentParser(description="Plot the per-case ratios of a check report")
    args.add_argument('report', type=str, help='<check>.jsonl written by hypo verify')
    args.add_argument('--output', type=str, default=None, help='Output figure path')
    args = args.parse_args()

    main(args.report, args.output)
