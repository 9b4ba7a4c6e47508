"""Plot the CSVs written by ``thinfilm simulate CONFIG --csv-dir DIR``.

usage: python3 plot_simulation.py DIR NAME [--out FILE]

Reads DIR/NAME_series.csv (t, L2_error, Linf_error, mass) and
DIR/NAME_final.csv (x, u). Needs matplotlib (``pip install .[plot]``).
"""

from __future__ import annotations

import argparse
import csv
from pathlib import Path

import matplotlib.pyplot as plt


def read_columns(path: Path) -> dict[str, list[float]]:
    with path.open() as fh:
        rows = list(csv.DictReader(fh))
    cols: dict[str, list[float]] = {}
    for row in rows:
        for key, val in row.items():
            cols.setdefault(key, []).append(float(val) if val not in ("", "nan") else float("nan"))
    return cols


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("dir", type=Path)
    ap.add_argument("name")
    ap.add_argument("--out", type=Path, default=None, help="save instead of showing")
    args = ap.parse_args()

    series = read_columns(args.dir / f"{args.name}_series.csv")
    final = read_columns(args.dir / f"{args.name}_final.csv")

    fig, (a0, a1, a2) = plt.subplots(1, 3, figsize=(13, 3.8))
    a0.plot(final["x"], final["u"], lw=1.2)
    a0.set(xlabel="x", ylabel="u", title="final state")

    t = series["t"]
    a1.semilogy(t, series["L2_error"], label="L2")
    a1.semilogy(t, series["Linf_error"], label="Linf")
    a1.set(xlabel="t", title="error vs exact")
    a1.legend()

    m0 = series["mass"][0]
    a2.plot(t, [abs(m - m0) / abs(m0) if m0 else abs(m - m0) for m in series["mass"]])
    a2.set(xlabel="t", title="relative mass drift")

    fig.tight_layout()
    if args.out:
        fig.savefig(args.out, dpi=120)
    else:
        plt.show()


if __name__ == "__main__":
    main()
