"""Static chart emission from metrics files."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def render_run_figures(reports: list[dict], out_dir: str) -> list[str]:
    """Overview and detection figures for one seed sweep; returns file paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    seeds = [r["seed"] for r in reports]

    fig, axes = plt.subplots(1, 3, figsize=(12, 3.6))
    axes[0].bar(range(len(seeds)), [r["pdr"] or 0.0 for r in reports], color="#3b7dd8")
    axes[0].set_title("packet delivery ratio")
    axes[0].set_ylim(0, 1.05)
    axes[1].bar(range(len(seeds)), [r["control_overhead"] or 0.0 for r in reports],
                color="#d88a3b")
    axes[1].set_title("control msgs / delivered")
    axes[2].bar(range(len(seeds)), [r["throughput_bytes_per_ktick"] for r in reports],
                color="#4da06a")
    axes[2].set_title("bytes / 1000 ticks")
    for ax in axes:
        ax.set_xlabel("seed index")
    fig.suptitle(reports[0]["scenario"] if reports else "run")
    fig.tight_layout()
    overview = os.path.join(out_dir, "metrics_overview.png")
    fig.savefig(overview, dpi=110)
    plt.close(fig)
    paths.append(overview)

    points = []
    for r in reports:
        for info in r.get("detections", {}).values():
            if info["detected"]:
                points.append((r["seed"], info["time_to_detection"], info["kind"]))
    if points:
        fig, ax = plt.subplots(figsize=(6, 3.6))
        kinds = sorted({k for _, _, k in points})
        for kind in kinds:
            xs = [s for s, _, k in points if k == kind]
            ys = [t for _, t, k in points if k == kind]
            ax.scatter(xs, ys, label=kind, s=18)
        ax.set_xlabel("seed")
        ax.set_ylabel("ticks from onset to verdict")
        ax.set_title("time to detection")
        ax.legend(fontsize=8)
        fig.tight_layout()
        detection = os.path.join(out_dir, "detection_times.png")
        fig.savefig(detection, dpi=110)
        plt.close(fig)
        paths.append(detection)
    return paths


def render_compare_figure(table: dict, out_dir: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    metrics = [m for m in sorted(table["metrics"])
               if table["metrics"][m]["mean_delta"] is not None]
    deltas = [table["metrics"][m]["mean_delta"] for m in metrics]
    fig, ax = plt.subplots(figsize=(7, 3.6))
    ax.barh(metrics, deltas, color="#7a5bb8")
    ax.axvline(0, color="black", linewidth=0.8)
    ax.set_xlabel("mean delta (b - a)")
    ax.set_title("seed-paired comparison")
    fig.tight_layout()
    path = os.path.join(out_dir, "compare_deltas.png")
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path
