"""Persisting runs: checkpoints, tidy CSV tables and optional figures."""
from __future__ import annotations

import csv
import json
import os
from datetime import datetime, timezone

from .policy import save_checkpoint


def write_csv(rows, path, fieldnames) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in fieldnames})


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def write_run(out_dir, cfg, result, fieldnames, extra=None) -> dict:
    """Checkpoint, metrics and a manifest; only the manifest carries a timestamp."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "checkpoint": os.path.join(out_dir, "checkpoint.json"),
        "metrics": os.path.join(out_dir, "metrics.csv"),
        "manifest": os.path.join(out_dir, "run.json"),
    }
    save_checkpoint(result.params, paths["checkpoint"])
    write_csv(result.rows, paths["metrics"], fieldnames)
    manifest = {"config": cfg.to_dict(), "final_pass_at_1": result.final_pass_at_1,
                **(extra or {}),
                "timestamp": datetime.now(timezone.utc).isoformat()}
    with open(paths["manifest"], "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths


# ---------------------------------------------------------------------------
# figures

def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def _eval_curve(rows):
    pts = [(int(r["iteration"]), float(r["pass_at_1_eval"]))
           for r in rows if r.get("pass_at_1_eval", "") != ""]
    return [p[0] for p in pts], [p[1] for p in pts]


def plot_training(rows, path, title=None) -> None:
    plt = _pyplot()
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4))
    x, y = _eval_curve(rows)
    ax1.plot(x, y, marker="o")
    ax1.xaxis.get_major_locator().set_params(integer=True)
    ax1.set_xlabel("iteration")
    ax1.set_ylabel("pass@1 (eval)")
    step_rows = [r for r in rows if r.get("loss_total", "") != ""]
    ax2.plot(range(1, len(step_rows) + 1), [float(r["loss_total"]) for r in step_rows])
    ax2.set_xlabel("update")
    ax2.set_ylabel("hybrid loss")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_curves(curves: dict, path, ylabel="pass@1 (eval)") -> None:
    """One line per label; ``curves`` maps label -> metrics rows."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    for label, rows in curves.items():
        x, y = _eval_curve(rows)
        ax.plot(x, y, marker=".", label=label)
    ax.xaxis.get_major_locator().set_params(integer=True)
    ax.set_xlabel("iteration")
    ax.set_ylabel(ylabel)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_summary_bars(summary, key, path, xlabel) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    labels = [str(r[key]) for r in summary]
    means = [float(r["mean_pass_at_1"]) for r in summary]
    stds = [float(r["std_pass_at_1"]) for r in summary]
    ax.bar(labels, means, yerr=stds, capsize=4, color="0.6", edgecolor="k")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("final pass@1 (mean over seeds)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
