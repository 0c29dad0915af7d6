"""Trace conditioning: gain, normalization, synthetic noise, dead receivers.

Transforms consume and return immutable ShotGatherSet values and advance the
stage tag, so an out-of-order pipeline (e.g. noise after gain) fails loudly
instead of silently producing differently-scaled data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import ShotGatherSet, Stage

NOISE_CUTOFF_HZ = 100.0
DEFAULT_MASKED_RECEIVERS = (10, 15, 20, 25, 30)


@dataclass(frozen=True)
class NormalizationStats:
    """Training-set extrema of gained traces, reused verbatim at test time."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)):
            raise ValueError("normalization stats must be finite")
        if self.hi <= self.lo:
            raise ValueError("degenerate normalization range")


@dataclass(frozen=True)
class CorruptionSpec:
    """What to do to raw gathers before gain/normalization.

    noise_sigma is relative: per-trace Gaussian noise is low-passed below
    cutoff_hz and scaled by the maximum of the raw gather set. use_abs_max
    switches that reference amplitude to max(|data|).
    """

    noise_sigma: float = 0.0
    masked_receivers: tuple[int, ...] = ()
    seed: int = 0
    cutoff_hz: float = NOISE_CUTOFF_HZ
    use_abs_max: bool = False

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if self.cutoff_hz <= 0:
            raise ValueError("cutoff_hz must be positive")
        if len(set(self.masked_receivers)) != len(self.masked_receivers):
            raise ValueError("masked_receivers has duplicates")

    @property
    def is_identity(self) -> bool:
        return self.noise_sigma == 0.0 and not self.masked_receivers


def gain_log1p(gathers: ShotGatherSet) -> ShotGatherSet:
    """Sign-preserving logarithmic gain, log(1 + |x|) * sign(x)."""
    gathers.require_stage(Stage.RAW, Stage.CORRUPTED)
    x = gathers.data
    out = np.sign(x) * np.log1p(np.abs(x))
    return gathers.with_data(out, Stage.GAINED)


def fit_normalization(gained_arrays) -> NormalizationStats:
    """Scan gained trace arrays (any iterable of ndarrays) for global min/max."""
    lo = np.inf
    hi = -np.inf
    seen = False
    for arr in gained_arrays:
        arr = np.asarray(arr)
        if arr.size == 0:
            continue
        seen = True
        lo = min(lo, float(arr.min()))
        hi = max(hi, float(arr.max()))
    if not seen:
        raise ValueError("no data to fit normalization on")
    return NormalizationStats(lo=lo, hi=hi)


def normalize(gathers: ShotGatherSet, stats: NormalizationStats) -> ShotGatherSet:
    """Affine map of gained traces into [-1, 1] using training extrema."""
    gathers.require_stage(Stage.GAINED)
    x = gathers.data
    out = 2.0 * (x - stats.lo) / (stats.hi - stats.lo) - 1.0
    return gathers.with_data(out, Stage.NORMALIZED)


def denormalize(gathers: ShotGatherSet, stats: NormalizationStats) -> ShotGatherSet:
    gathers.require_stage(Stage.NORMALIZED)
    x = gathers.data
    out = (x + 1.0) / 2.0 * (stats.hi - stats.lo) + stats.lo
    return gathers.with_data(out, Stage.GAINED)


def _lowpass_noise(rng: np.random.Generator, nt: int, sigma: float,
                   dt: float, cutoff_hz: float) -> np.ndarray:
    noise = rng.normal(0.0, sigma, size=nt)
    spec = np.fft.rfft(noise)
    freqs = np.fft.rfftfreq(nt, d=dt)
    spec[freqs > cutoff_hz] = 0.0
    return np.fft.irfft(spec, n=nt)


def add_filtered_noise(
    gathers: ShotGatherSet,
    sigma: float,
    seed: int,
    dt: float = 1.0e-3,
    cutoff_hz: float = NOISE_CUTOFF_HZ,
    use_abs_max: bool = False,
) -> ShotGatherSet:
    """Add band-limited Gaussian noise scaled to the gather amplitude.

    Noise is drawn per trace from a substream keyed by (seed, source,
    receiver), so corruption of one trace never depends on how many other
    traces exist or in which order they are processed.
    """
    gathers.require_stage(Stage.RAW)
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    nyquist = 0.5 / dt
    if cutoff_hz >= nyquist:
        raise ValueError(f"cutoff {cutoff_hz} Hz is not below Nyquist {nyquist} Hz")
    if sigma == 0.0:
        return gathers.with_data(gathers.data, Stage.CORRUPTED)
    data = np.array(gathers.data, dtype=np.float64)
    ref = float(np.abs(data).max() if use_abs_max else data.max())
    n_src, n_rec, nt = data.shape
    for s in range(n_src):
        for r in range(n_rec):
            rng = np.random.default_rng([seed, s, r])
            data[s, r] += _lowpass_noise(rng, nt, sigma, dt, cutoff_hz) * ref
    return gathers.with_data(data, Stage.CORRUPTED)


def mask_receivers(gathers: ShotGatherSet, indices) -> ShotGatherSet:
    """Zero out whole receiver columns (dead-trace simulation)."""
    gathers.require_stage(Stage.RAW, Stage.CORRUPTED)
    idx = np.asarray(sorted(set(int(i) for i in indices)), dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= gathers.n_receivers):
        raise ValueError("masked receiver index outside gather")
    data = np.array(gathers.data)
    data[:, idx, :] = 0.0
    return gathers.with_data(data, Stage.CORRUPTED)


def apply_corruption(
    gathers: ShotGatherSet, spec: CorruptionSpec, dt: float = 1.0e-3
) -> ShotGatherSet:
    """Noise first, then receiver masking, matching the survey failure model
    (dead channels record nothing at all, not even ambient noise)."""
    gathers.require_stage(Stage.RAW)
    out = add_filtered_noise(
        gathers,
        sigma=spec.noise_sigma,
        seed=spec.seed,
        dt=dt,
        cutoff_hz=spec.cutoff_hz,
        use_abs_max=spec.use_abs_max,
    )
    if spec.masked_receivers:
        out = mask_receivers(out, spec.masked_receivers)
    return out


def prepare_for_network(
    gathers: ShotGatherSet, stats: NormalizationStats
) -> ShotGatherSet:
    """Gain then normalize; accepts raw or corrupted input."""
    return normalize(gain_log1p(gathers), stats)
