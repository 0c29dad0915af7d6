"""Figure rendering: violin and scatter score plots, velocity heatmap
panels on a shared color scale, and shot-gather trace overlays."""

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "onetfwi-figs"

import matplotlib.pyplot as plt
import numpy as np
from skimage.metrics import structural_similarity

from .schemas import SchemaError, read_field_stack, read_scores, read_trace_stack

KINDS = ("heatmap_panel", "violin", "scatter", "trace_overlay")
VELOCITY_RANGE = (1500.0, 4500.0)
DPI = 150


@dataclass(frozen=True)
class FigureSpec:
    kind: str
    inputs: tuple[str, ...]
    output: str
    labels: tuple[str, ...] = ()
    color_range: tuple[float, float] = VELOCITY_RANGE
    shot: int = 0
    receivers: tuple[int, ...] = ()
    dt: float = 1e-3

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown figure kind {self.kind!r}")
        if not self.inputs:
            raise ValueError("a figure needs at least one input file")
        if self.color_range[1] <= self.color_range[0]:
            raise ValueError("empty color range")

    @classmethod
    def from_dict(cls, d: dict) -> "FigureSpec":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown spec key(s): {', '.join(sorted(unknown))}")
        d = dict(d)
        for key in ("inputs", "labels", "receivers", "color_range"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def render(spec: FigureSpec) -> Path:
    """Draw the figure described by spec and write it to spec.output."""
    out = Path(spec.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig = _RENDERERS[spec.kind](spec)
    try:
        fig.savefig(out, dpi=DPI, metadata=_metadata(out))
    finally:
        plt.close(fig)
    return out


def _metadata(out: Path) -> dict:
    # strip run-dependent fields so identical inputs give identical bytes
    if out.suffix == ".png":
        return {"Software": "onetfwi-figs"}
    if out.suffix == ".pdf":
        return {"Creator": "onetfwi-figs", "Producer": "onetfwi-figs",
                "CreationDate": None}
    return {}


# ---------------------------------------------------------------------------
# score plots

def _grouped_scores(spec: FigureSpec) -> dict[str, np.ndarray]:
    groups: dict[str, list] = {}
    samples: dict[str, list] = {}
    for path in spec.inputs:
        for row in read_scores(path):
            groups.setdefault(row["condition"], []).append(row["rel_l2"])
            samples.setdefault(row["condition"], []).append(row["sample"])
    out = {}
    for cond, vals in groups.items():
        out[cond] = (np.asarray(samples[cond]), np.asarray(vals) * 100.0)
    return out


def _group_labels(spec: FigureSpec, groups) -> list[str]:
    if spec.labels:
        if len(spec.labels) != len(groups):
            raise SchemaError(
                f"{len(spec.labels)} labels for {len(groups)} conditions"
            )
        return list(spec.labels)
    return list(groups)


def _violin(spec: FigureSpec):
    groups = _grouped_scores(spec)
    names = _group_labels(spec, groups)
    fig, ax = plt.subplots(figsize=(1.2 + 1.1 * len(groups), 3.6))
    positions = np.arange(1, len(groups) + 1)
    varied = [(p, v) for p, (_, v) in zip(positions, groups.values())
              if np.ptp(v) > 0]
    if varied:
        ax.violinplot([v for _, v in varied], positions=[p for p, _ in varied],
                      showmeans=True)
    for pos, (_, vals) in zip(positions, groups.values()):
        if np.ptp(vals) == 0:
            # kde of a constant sample is singular; a tick says it all
            ax.hlines(vals[0], pos - 0.25, pos + 0.25, color="C0", lw=2)
        ax.plot(np.full(vals.shape, pos), vals, ".", color="0.4", ms=3, alpha=0.6)
    ax.set_xticks(positions, names)
    ax.set_ylabel("relative L2 error (%)")
    fig.tight_layout()
    return fig


def _scatter(spec: FigureSpec):
    groups = _grouped_scores(spec)
    names = _group_labels(spec, groups)
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    markers = "osD^vP*"
    for i, (name, (samples, vals)) in enumerate(zip(names, groups.values())):
        ax.scatter(samples, vals, s=18, marker=markers[i % len(markers)],
                   label=name, alpha=0.8)
    ax.set_xlabel("sample")
    ax.set_ylabel("relative L2 error (%)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return fig


# ---------------------------------------------------------------------------
# velocity panels

def normalize_velocity(values: np.ndarray, color_range=VELOCITY_RANGE) -> np.ndarray:
    """Map velocities onto [0, 1] for display and SSIM; 3000 m/s on the
    default range lands exactly at the midpoint."""
    lo, hi = color_range
    return np.clip((np.asarray(values, dtype=np.float64) - lo) / (hi - lo), 0.0, 1.0)


def panel_scores(truth: np.ndarray, panel: np.ndarray, color_range) -> tuple:
    """(relative L2 in percent, SSIM on the display normalization)."""
    rel = np.linalg.norm(panel - truth) / np.linalg.norm(truth) * 100.0
    ssim = structural_similarity(
        normalize_velocity(truth, color_range),
        normalize_velocity(panel, color_range),
        gaussian_weights=True,
        sigma=1.5,
        use_sample_covariance=False,
        data_range=1.0,
    )
    return rel, ssim


def _heatmap_panel(spec: FigureSpec):
    panels = np.concatenate([read_field_stack(p) for p in spec.inputs])
    if spec.labels and len(spec.labels) != len(panels):
        raise SchemaError(f"{len(spec.labels)} labels for {len(panels)} panels")
    names = list(spec.labels) or [f"panel {i}" for i in range(len(panels))]
    lo, hi = spec.color_range

    n = len(panels)
    fig, axes = plt.subplots(1, n, figsize=(2.6 * n + 1.2, 3.0), squeeze=False)
    im = None
    for i, (ax, panel) in enumerate(zip(axes[0], panels)):
        im = ax.imshow(panel, cmap="jet", vmin=lo, vmax=hi, aspect="auto")
        title = names[i]
        if i > 0:
            rel, ssim = panel_scores(panels[0], panel, spec.color_range)
            title += f"\n({rel:.2f}, {ssim:.2f})"
        ax.set_title(title, fontsize=9)
        ax.set_xticks([])
        ax.set_yticks([])
    fig.colorbar(im, ax=axes[0].tolist(), label="velocity (m/s)", shrink=0.9)
    return fig


# ---------------------------------------------------------------------------
# trace overlays

def max_residual(stacks: list[np.ndarray], shot: int, receivers) -> float:
    """Largest deviation from the first stack over the plotted traces."""
    base = stacks[0][shot][list(receivers)]
    return max(
        (float(np.abs(s[shot][list(receivers)] - base).max()) for s in stacks[1:]),
        default=0.0,
    )


def _trace_overlay(spec: FigureSpec):
    stacks = [read_trace_stack(p) for p in spec.inputs]
    shape = stacks[0].shape
    for path, s in zip(spec.inputs, stacks):
        if s.shape != shape:
            raise SchemaError(
                f"{Path(path).name}: shape {s.shape} differs from {shape}"
            )
    if not 0 <= spec.shot < shape[0]:
        raise SchemaError(f"shot {spec.shot} outside stack with {shape[0]}")
    receivers = spec.receivers or tuple(
        np.linspace(0, shape[1] - 1, min(6, shape[1])).astype(int)
    )
    if any(not 0 <= r < shape[1] for r in receivers):
        raise SchemaError(f"receiver index outside 0..{shape[1] - 1}")
    names = list(spec.labels) if spec.labels else [
        Path(p).stem for p in spec.inputs
    ]
    if len(names) != len(stacks):
        raise SchemaError(f"{len(names)} labels for {len(stacks)} inputs")

    t = np.arange(shape[2]) * spec.dt
    fig, axes = plt.subplots(
        len(receivers), 1, figsize=(6.4, 1.1 * len(receivers) + 0.8),
        sharex=True, squeeze=False,
    )
    for ax, rec in zip(axes[:, 0], receivers):
        for name, stack in zip(names, stacks):
            ax.plot(t, stack[spec.shot, rec], lw=0.8, label=name)
        ax.set_ylabel(f"r{rec}", fontsize=8)
        ax.tick_params(labelsize=7)
    axes[0, 0].legend(fontsize=7, loc="upper right")
    axes[-1, 0].set_xlabel("time (s)")
    if len(stacks) > 1:
        resid = max_residual(stacks, spec.shot, receivers)
        fig.suptitle(f"shot {spec.shot}, max residual {resid:.3e}", fontsize=9)
    fig.tight_layout()
    return fig


_RENDERERS = {
    "violin": _violin,
    "scatter": _scatter,
    "heatmap_panel": _heatmap_panel,
    "trace_overlay": _trace_overlay,
}
