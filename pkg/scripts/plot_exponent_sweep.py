"""
Fitted x-regularity exponent against beta.

Reads the sweep.csv written by `hypo sweep exponent-fit --parameter beta ...` and
plots the fitted exponent of every sweep point next to the curve 2b/(1+2b).

The figure is saved to 'figures/exponent_sweep.png' unless --output is given.
"""
import argparse
from pathlib import Path

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
import seaborn as sns

# Style settings
sns.set_theme(context='paper', style='white')
palette = sns.color_palette("Dark2")
sns.set_palette(palette)
plt.rcParams["figure.figsize"] = (7, 5)


def load_sweep(path):
    """
    Load a beta sweep of the exponent fit.
    Args:
        path (str): Path to sweep.csv.
    Returns:
        pd.DataFrame: One row per beta with the fitted and target exponents.
    """
    try:
        sweep = pd.read_csv(path)
    except FileNotFoundError:
        raise FileNotFoundError(f"File not found: {path}")
    if not (sweep['parameter'] == 'beta').all() or sweep['exponent'].isna().all():
        raise ValueError(f"{path} is not a beta sweep of the exponent fit")
    return sweep.sort_values('value')


def plot_exponent_sweep(sweep, output, half_width=0.01):
    """
    Plot fitted exponents with their grid half-width against the gain curve.
    Args:
        sweep (pd.DataFrame): Output of load_sweep.
        output (Path): Figure path.
        half_width (float): s-grid spacing of the fit.
    """
    beta = np.linspace(0.05, 1.0, 200)
    fig, ax = plt.subplots()
    ax.plot(beta, 2 * beta / (1 + 2 * beta), color='gray', linestyle='--', label=r'$2\beta/(1+2\beta)$')
    ax.errorbar(sweep['value'], sweep['exponent'], yerr=half_width, fmt='o', capsize=3, label='fitted')
    failed = sweep[~sweep['passed'].astype(bool)]
    if len(failed):
        ax.scatter(failed['value'], failed['exponent'], marker='x', color='red', zorder=3, label='failed')
    ax.set_xlabel(r'$\beta$')
    ax.set_ylabel('x-regularity exponent')
    ax.set_title('Sharp exponent of the scaling family', fontweight='bold')
    ax.legend()
    sns.despine()
    plt.tight_layout()
    output.parent.mkdir(parents=True, exist_ok=True)
    plt.savefig(output)
    plt.close(fig)
    print(f"Exponent sweep plot saved to: {output}")


def main(sweep_path, output, half_width):
    try:
        sweep = load_sweep(sweep_path)
    except (FileNotFoundError, ValueError) as e:
        print(e)
        return
    plot_exponent_sweep(sweep, Path(output), half_width)


if __name__ == "__main__":
    args = argparse.ArgumentParser(description="Plot fitted exponents of a beta sweep")
    args.add_argument('sweep', type=str, help='sweep.csv of an exponent-fit sweep over beta')
    args.add_argument('--output', type=str, default='figures/exponent_sweep.png', help='Output figure path')
    args.add_argument('--half-width', type=float, default=0.01, help='s-grid spacing used by the fit')
    args = args.parse_args()

    main(args.sweep, args.output, args.half_width)
