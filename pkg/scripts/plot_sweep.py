"""Plot the CSVs written by theta_sweep.py or drift_experiment.py --traces.

Needs matplotlib, which the package itself does not depend on.

    python scripts/plot_sweep.py theta theta_sweep.csv theta.png
    python scripts/plot_sweep.py trace drift_traces.csv drift.png
"""

import argparse
import csv
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def plot_theta(rows, ax):
    by_seed = defaultdict(list)
    for r in rows:
        by_seed[r["dataset_seed"]].append((float(r["theta"]), float(r["rmse"])))
    for seed, pts in sorted(by_seed.items()):
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=f"dataset {seed}")
    ax.set_xlabel("theta")
    ax.set_ylabel("offline RMSE")


def plot_trace(rows, ax):
    series = defaultdict(list)
    for r in rows:
        if r["skipped"] in ("True", "1"):
            continue
        series[(r["seed"], r["mode"])].append(float(r["rmse"]))
    for (seed, mode), vals in sorted(series.items()):
        ax.plot(vals, label=f"{mode} (seed {seed})")
    ax.set_xlabel("window")
    ax.set_ylabel("window RMSE")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("kind", choices=("theta", "trace"))
    ap.add_argument("csv")
    ap.add_argument("png")
    args = ap.parse_args()
    fig, ax = plt.subplots(figsize=(7, 4))
    (plot_theta if args.kind == "theta" else plot_trace)(read(args.csv), ax)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(args.png, dpi=120)


if __name__ == "__main__":
    main()
