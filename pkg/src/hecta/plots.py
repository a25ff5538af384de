"""Static SVG figures: training curves, TCR bars with CI whiskers, and
trajectory overlays. Output is byte-stable for identical inputs."""
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .learning import moving_average  # noqa: E402
from .scenario import CLASS_ORDER, TASK_TYPE_ORDER  # noqa: E402

plt.rcParams["svg.hashsalt"] = "hecta"
plt.rcParams["svg.fonttype"] = "none"

CLASS_COLORS = {"Uav": "tab:blue", "Worker": "tab:green", "Ugv": "tab:red"}
TASK_MARKERS = {"Aerial": "^", "Detailed": "o", "Ground": "s"}


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def training_curve(metrics, path, window=200):
    if not metrics:
        raise ValueError("no metrics to plot")
    ep = np.array([m["episode"] for m in metrics])
    rate = np.array([m["tcr"] for m in metrics])
    loss = np.array([m["loss"] for m in metrics])
    w = max(1, min(window, len(ep)))
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(ep, rate, color="0.8", lw=0.6, label="TCR")
    ax.plot(ep, moving_average(rate, w), color="tab:blue", label=f"TCR ({w}-ep mean)")
    ax.set_xlabel("episode")
    ax.set_ylabel("task completion rate")
    ax.set_ylim(0, 1)
    ax2 = ax.twinx()
    if np.any(np.isfinite(loss)):
        ax2.plot(ep, moving_average(loss, w), color="tab:red", label=f"loss ({w}-ep mean)")
    ax2.set_ylabel("loss")
    lines = ax.get_lines() + ax2.get_lines()
    ax.legend(lines, [l.get_label() for l in lines], loc="upper left", fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def tcr_bars(labels, means, cis, path, title=None):
    if not labels:
        raise ValueError("no results to plot")
    cis = [0.0 if c is None or not np.isfinite(c) else c for c in cis]
    fig, ax = plt.subplots(figsize=(1.2 * len(labels) + 2, 4))
    x = np.arange(len(labels))
    ax.bar(x, means, color="tab:blue", alpha=0.8)
    ax.errorbar(x, means, yerr=cis, fmt="none", ecolor="black", capsize=4)
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=20, ha="right")
    ax.set_ylabel("TCR")
    ax.set_ylim(0, 1)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def trajectory_overlay(spec, rows, path):
    """``rows`` are trajectory CSV dicts; one polyline per entity.

    Returns the number of polylines drawn.
    """
    if not rows:
        raise ValueError("empty trajectory")
    fig, ax = plt.subplots(figsize=(6, 6))
    H, W = spec.grid_height, spec.grid_width
    for r, c in sorted(spec.obstacles):
        ax.add_patch(plt.Rectangle((c - 0.5, r - 0.5), 1, 1, color="0.3"))
    for tt in TASK_TYPE_ORDER:
        cells = [t.location for t in spec.tasks if t.task_type is tt]
        if cells:
            rr, cc = zip(*cells)
            ax.scatter(cc, rr, marker=TASK_MARKERS[tt.value], s=30, facecolors="none",
                       edgecolors="0.4", label=f"{tt.value} task")
    by_entity = {}
    for row in rows:
        by_entity.setdefault(int(row["entity_id"]), []).append(row)
    for k in sorted(by_entity):
        pts = sorted(by_entity[k], key=lambda r: int(r["step"]))
        cls = pts[0]["class"]
        rr = [int(p["row"]) for p in pts]
        cc = [int(p["col"]) for p in pts]
        ax.plot(cc, rr, "-o", ms=3, lw=1.2, color=CLASS_COLORS.get(cls, "k"), label=f"{cls} {k}")
    ax.set_xlim(-0.5, W - 0.5)
    ax.set_ylim(H - 0.5, -0.5)
    ax.set_aspect("equal")
    ax.set_xticks(range(W))
    ax.set_yticks(range(H))
    ax.tick_params(labelsize=6)
    ax.grid(True, lw=0.3)
    ax.legend(fontsize=6, loc="upper left", bbox_to_anchor=(1.01, 1))
    fig.tight_layout()
    _save(fig, path)
    return len(by_entity)


__all__ = ["training_curve", "tcr_bars", "trajectory_overlay", "CLASS_ORDER"]
