"""CSV metric reports and the matplotlib figures rendered alongside them."""

import csv

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

CSV_COLUMNS = [
    "scene", "view_fraction", "psnr", "ssim", "depth_mse", "chamfer",
    "completeness",
]


def write_metrics_csv(rows, path):
    """rows: list of dicts keyed by CSV_COLUMNS."""
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=CSV_COLUMNS)
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(row[k]) for k in CSV_COLUMNS})


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return v


def read_metrics_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def save_frame_figure(frame, path, title=None):
    """Side-by-side color and depth panels for one RGBD frame."""
    fig, axes = plt.subplots(1, 2, figsize=(6, 3))
    axes[0].imshow(frame.rgb, interpolation="nearest")
    axes[0].set_title("color")
    dm = axes[1].imshow(frame.depth, cmap="viridis", interpolation="nearest")
    axes[1].set_title("depth [m]")
    fig.colorbar(dm, ax=axes[1], fraction=0.046)
    for ax in axes:
        ax.set_xticks([])
        ax.set_yticks([])
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": "rgbdsynth"})
    plt.close(fig)


def save_eval_figure(rows, path):
    """Bar chart of the per-view image metrics from an eval run."""
    fig, axes = plt.subplots(1, 3, figsize=(10, 3))
    idx = range(len(rows))
    for ax, key in zip(axes, ("psnr", "ssim", "depth_mse")):
        ax.bar(idx, [float(r[key]) for r in rows], color="steelblue")
        ax.set_title(key)
        ax.set_xlabel("view")
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": "rgbdsynth"})
    plt.close(fig)


def sweep_scene_label(scene, beta):
    """Scene-column label for sweep rows; keeps the CSV schema fixed."""
    return f"{scene}|beta={beta:g}"


def _beta_of(row):
    name = row["scene"]
    return float(name.rsplit("|beta=", 1)[1]) if "|beta=" in name else 0.0


def save_sweep_figure(rows, path):
    """Chamfer and completeness vs view fraction, one curve per guidance beta."""
    betas = sorted({_beta_of(r) for r in rows})
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    for beta in betas:
        sub = sorted(
            (r for r in rows if _beta_of(r) == beta),
            key=lambda r: float(r["view_fraction"]),
        )
        fr = [float(r["view_fraction"]) for r in sub]
        axes[0].plot(fr, [float(r["chamfer"]) for r in sub],
                     marker="o", label=f"beta={beta:g}")
        axes[1].plot(fr, [float(r["completeness"]) for r in sub],
                     marker="o", label=f"beta={beta:g}")
    axes[0].set_ylabel("chamfer [m^2]")
    axes[1].set_ylabel("completeness@0.1m")
    for ax in axes:
        ax.set_xlabel("view fraction")
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": "rgbdsynth"})
    plt.close(fig)
