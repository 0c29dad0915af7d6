"""Operator network mapping multi-shot seismograms to velocity fields.

The branch is a UNet over the gather stack (receivers x time, one channel
per source) whose decoder output, concatenated with a center-cropped copy
of the raw input, feeds a strided CNN reducer and a fully connected head.
The trunk embeds normalized (x, z) query points. The field estimate at a
point is the dot product of branch and trunk features, squashed through a
scaled sigmoid onto the open interval (output_lo, output_hi) m/s.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import autograd as ag
from .fields import Grid2D

OUTPUT_LO = 1490.0
OUTPUT_HI = 4510.0


def conv_out(size: int, k: int, s: int) -> int:
    if size < k:
        raise ValueError(f"input extent {size} smaller than kernel {k}")
    return (size - k) // s + 1


def tconv_out(size: int, k: int, s: int) -> int:
    return (size - 1) * s + k


def align_skip(skip: ag.Tensor, target_hw: tuple[int, int], budget: int) -> ag.Tensor:
    """Center-crop a skip tensor down to the decoder's spatial size.

    Strided valid convolutions lose a few rows/columns per level, so skip
    and decoder sizes disagree by small, architecture-determined amounts.
    The budget caps that mismatch; exceeding it means the network was
    misconfigured, not that more cropping is wanted.
    """
    h, w = target_hw
    _, _, H, W = skip.shape
    dh, dw = H - h, W - w
    if dh < 0 or dw < 0:
        raise ValueError(f"skip {H}x{W} smaller than decoder output {h}x{w}")
    if dh > budget or dw > budget:
        raise ValueError(f"skip misalignment ({dh}, {dw}) exceeds budget {budget}")
    return ag.crop2d(skip, dh // 2, dw // 2, h, w)


@dataclass(frozen=True)
class ModelConfig:
    basis_dim: int
    encoder_channels: tuple[int, ...]
    decoder_channels: tuple[int, ...]
    stack_channels: tuple[int, ...]
    stack_strides: tuple[tuple[int, int], ...]
    branch_hidden: tuple[int, ...]
    trunk_hidden: tuple[int, ...]
    in_channels: int = 5
    input_shape: tuple[int, int] = (70, 1000)
    input_pool: tuple[int, int] = (1, 1)
    unet_kernel: tuple[int, int] = (5, 9)
    unet_stride: tuple[int, int] = (2, 2)
    stack_kernel: tuple[int, int] = (3, 9)
    leaky_alpha: float = 0.01
    crop_budget: int = 8
    input_crop_budget: int = 16
    # octaves of sin/cos positional features prepended to the trunk input;
    # 0 keeps the plain (x, z) trunk
    trunk_fourier: int = 0
    output_lo: float = OUTPUT_LO
    output_hi: float = OUTPUT_HI

    def __post_init__(self):
        if len(self.encoder_channels) != len(self.decoder_channels):
            raise ValueError("encoder/decoder depth mismatch")
        if len(self.stack_channels) != len(self.stack_strides):
            raise ValueError("stack channels/strides length mismatch")
        if self.output_hi <= self.output_lo:
            raise ValueError("output range is empty")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        for key in (
            "encoder_channels", "decoder_channels", "stack_channels",
            "branch_hidden", "trunk_hidden", "input_shape", "input_pool",
            "unet_kernel", "unet_stride", "stack_kernel",
        ):
            d[key] = tuple(d[key])
        d["stack_strides"] = tuple(tuple(s) for s in d["stack_strides"])
        return cls(**d)


def paper_model_config() -> ModelConfig:
    """Full-size architecture: 5-channel 70x1000 gathers, 2000 basis terms."""
    return ModelConfig(
        basis_dim=2000,
        encoder_channels=(8, 10, 12, 16),
        decoder_channels=(8, 12, 16, 20),
        stack_channels=(32, 40, 48, 64, 64, 128, 128, 256, 256),
        stack_strides=(
            (1, 1), (1, 1), (1, 1),
            (1, 2), (1, 2),
            (2, 2), (2, 2), (2, 2), (2, 2),
        ),
        branch_hidden=(2000, 2000, 2000, 2000),
        trunk_hidden=(2000,) * 10,
    )


def toy_model_config() -> ModelConfig:
    """Reduced architecture for quick experiments: time pooled by 4,
    narrow reducer, 256 basis terms. Same topology as the full model,
    except the trunk gets positional features: at this scale the plain
    coordinate trunk sharpens layer interfaces far too slowly."""
    return ModelConfig(
        basis_dim=256,
        encoder_channels=(8, 10, 12, 16),
        decoder_channels=(8, 12, 16, 20),
        stack_channels=(32, 48, 64, 96),
        stack_strides=((1, 2), (2, 2), (2, 2), (2, 2)),
        branch_hidden=(512,),
        trunk_hidden=(128,) * 4,
        input_pool=(1, 4),
        trunk_fourier=6,
    )


@dataclass(frozen=True)
class ShapePlan:
    encoder: tuple[tuple[int, int], ...]
    decoder: tuple[tuple[int, int], ...]
    stack: tuple[tuple[int, int], ...]
    flatten_dim: int


def plan_shapes(config: ModelConfig) -> ShapePlan:
    """Walk the spatial dimensions through the branch; raises if any layer
    underflows or a skip falls outside its crop budget."""
    kh, kw = config.unet_kernel
    sh, sw = config.unet_stride
    h = config.input_shape[0] // config.input_pool[0]
    w = config.input_shape[1] // config.input_pool[1]
    pooled = (h, w)
    enc = []
    for _ in config.encoder_channels:
        h, w = conv_out(h, kh, sh), conv_out(w, kw, sw)
        enc.append((h, w))
    dec = []
    skip_shapes = [*enc[-2::-1], pooled]
    budgets = [config.crop_budget] * (len(enc) - 1) + [config.input_crop_budget]
    for i in range(len(config.decoder_channels)):
        h, w = tconv_out(h, kh, sh), tconv_out(w, kw, sw)
        dec.append((h, w))
        skh, skw = skip_shapes[i]
        dh, dw = skh - h, skw - w
        if dh < 0 or dw < 0:
            raise ValueError(f"decoder level {i} larger than its skip")
        if dh > budgets[i] or dw > budgets[i]:
            raise ValueError(
                f"decoder level {i} skip misalignment ({dh}, {dw}) "
                f"exceeds budget {budgets[i]}"
            )
    stack = []
    ckh, ckw = config.stack_kernel
    for csh, csw in config.stack_strides:
        h, w = conv_out(h, ckh, csh), conv_out(w, ckw, csw)
        stack.append((h, w))
    flatten = config.stack_channels[-1] * h * w
    return ShapePlan(tuple(enc), tuple(dec), tuple(stack), flatten)


def fourier_embed(coords: np.ndarray, octaves: int) -> np.ndarray:
    """Append [sin(2^k pi u), cos(2^k pi u)] per axis for k < octaves.

    Plain coordinate MLPs sharpen step-like targets very slowly; giving the
    trunk these features directly removes that bottleneck. (n, 2) -> (n, 2 + 4*octaves).
    """
    base = np.asarray(coords)
    feats = [base]
    for k in range(octaves):
        arg = (2.0 ** k) * np.pi * base
        feats.append(np.sin(arg))
        feats.append(np.cos(arg))
    return np.concatenate(feats, axis=1)


class DeepONet:
    """Branch/trunk operator network with parameters on a flat name map."""

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        self.plan = plan_shapes(config)
        self.params: dict[str, ag.Parameter] = {}
        rng = np.random.default_rng(seed)
        kh, kw = config.unet_kernel

        c_in = config.in_channels
        for i, c_out in enumerate(config.encoder_channels):
            self._conv_param(rng, f"branch.enc{i}", (c_out, c_in, kh, kw))
            c_in = c_out
        # Decoder level i upsamples, then concatenates a cropped skip:
        # encoder outputs in reverse for the first levels, the raw input
        # stack for the last.
        skip_channels = [*config.encoder_channels[-2::-1], config.in_channels]
        for i, c_out in enumerate(config.decoder_channels):
            self._conv_param(rng, f"branch.dec{i}", (c_in, c_out, kh, kw), transpose=True)
            c_in = c_out + skip_channels[i]
        ckh, ckw = config.stack_kernel
        for i, c_out in enumerate(config.stack_channels):
            self._conv_param(rng, f"branch.stack{i}", (c_out, c_in, ckh, ckw))
            c_in = c_out
        width = self.plan.flatten_dim
        for i, n in enumerate(config.branch_hidden):
            self._dense_param(rng, f"branch.fc{i}", width, n)
            width = n
        # Zero-initialized head: the initial raw output is exactly 0, so the
        # first prediction sits at the midpoint of the velocity range.
        self._dense_param(rng, "branch.head", width, config.basis_dim, zero=True)
        width = 2 + 4 * config.trunk_fourier
        for i, n in enumerate(config.trunk_hidden):
            self._dense_param(rng, f"trunk.fc{i}", width, n)
            width = n
        self._dense_param(rng, "trunk.head", width, config.basis_dim)

    def _conv_param(self, rng, name, shape, transpose=False):
        fan_in = shape[1] * shape[2] * shape[3] if not transpose else shape[0] * shape[2] * shape[3]
        std = np.sqrt(2.0 / fan_in)
        self.params[f"{name}.kernel"] = ag.Parameter(
            rng.normal(0.0, std, size=shape), f"{name}.kernel", dtype=self.dtype
        )
        bias_dim = shape[0] if not transpose else shape[1]
        self.params[f"{name}.bias"] = ag.Parameter(
            np.zeros(bias_dim), f"{name}.bias", dtype=self.dtype
        )

    def _dense_param(self, rng, name, n_in, n_out, zero=False):
        std = 0.0 if zero else np.sqrt(2.0 / n_in)
        w = np.zeros((n_in, n_out)) if zero else rng.normal(0.0, std, size=(n_in, n_out))
        self.params[f"{name}.weight"] = ag.Parameter(w, f"{name}.weight", dtype=self.dtype)
        self.params[f"{name}.bias"] = ag.Parameter(
            np.zeros(n_out), f"{name}.bias", dtype=self.dtype
        )

    def parameters(self) -> list[ag.Parameter]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def _p(self, name) -> ag.Parameter:
        return self.params[name]

    def branch(self, x) -> ag.Tensor:
        """(B, n_sources, n_receivers, nt) normalized gathers -> (B, p)."""
        cfg = self.config
        x = x if isinstance(x, ag.Tensor) else ag.Tensor(np.asarray(x, dtype=self.dtype))
        if cfg.input_pool != (1, 1):
            x = ag.avg_pool2d(x, cfg.input_pool)
        enc_outs = []
        h = x
        for i in range(len(cfg.encoder_channels)):
            h = ag.relu(
                ag.conv2d(
                    h,
                    self._p(f"branch.enc{i}.kernel"),
                    self._p(f"branch.enc{i}.bias"),
                    stride=cfg.unet_stride,
                )
            )
            enc_outs.append(h)
        skips = [*enc_outs[-2::-1], x]
        budgets = [cfg.crop_budget] * (len(enc_outs) - 1) + [cfg.input_crop_budget]
        d = enc_outs[-1]
        for i in range(len(cfg.decoder_channels)):
            d = ag.leaky_relu(
                ag.conv2d_transpose(
                    d,
                    self._p(f"branch.dec{i}.kernel"),
                    self._p(f"branch.dec{i}.bias"),
                    stride=cfg.unet_stride,
                ),
                alpha=cfg.leaky_alpha,
            )
            aligned = align_skip(skips[i], d.shape[2:], budgets[i])
            d = ag.concat([d, aligned], axis=1)
        for i in range(len(cfg.stack_channels)):
            d = ag.relu(
                ag.conv2d(
                    d,
                    self._p(f"branch.stack{i}.kernel"),
                    self._p(f"branch.stack{i}.bias"),
                    stride=cfg.stack_strides[i],
                )
            )
        h = ag.reshape(d, (d.shape[0], self.plan.flatten_dim))
        for i in range(len(cfg.branch_hidden)):
            h = ag.relu(
                ag.dense(h, self._p(f"branch.fc{i}.weight"), self._p(f"branch.fc{i}.bias"))
            )
        return ag.dense(h, self._p("branch.head.weight"), self._p("branch.head.bias"))

    def trunk(self, coords) -> ag.Tensor:
        """(n, 2) normalized (x, z) points -> (n, p) basis features."""
        cfg = self.config
        pts = coords.data if isinstance(coords, ag.Tensor) else np.asarray(coords)
        if cfg.trunk_fourier:
            pts = fourier_embed(pts, cfg.trunk_fourier)
        h = ag.Tensor(np.asarray(pts, dtype=self.dtype))
        for i in range(len(cfg.trunk_hidden)):
            h = ag.relu(
                ag.dense(h, self._p(f"trunk.fc{i}.weight"), self._p(f"trunk.fc{i}.bias"))
            )
        return ag.relu(
            ag.dense(h, self._p("trunk.head.weight"), self._p("trunk.head.bias"))
        )

    def raw_output(self, gathers, coords) -> ag.Tensor:
        """Unscaled branch-trunk dot products, shape (B, n_points)."""
        b = self.branch(gathers)
        t = self.trunk(coords)
        return ag.matmul(b, ag.transpose2d(t))

    def scaled_output(self, gathers, coords) -> ag.Tensor:
        """(B, n_points) velocities: lo + sigmoid(raw) * (hi - lo)."""
        cfg = self.config
        s = ag.sigmoid(self.raw_output(gathers, coords))
        return ag.add(ag.mul(s, cfg.output_hi - cfg.output_lo), cfg.output_lo)

    def predict_velocity(self, gathers: np.ndarray, grid: Grid2D) -> np.ndarray:
        """Inference on a batch of normalized gather stacks -> (B, nz, nx).

        The sigmoid factor is nudged off exact 0/1 before scaling so
        predictions stay strictly inside the open output interval even
        when the raw outputs saturate in float32.
        """
        cfg = self.config
        with ag.no_grad():
            raw = self.raw_output(np.asarray(gathers, dtype=self.dtype),
                                  grid.normalized_coords()).data
        x = raw.astype(np.float64)
        s = np.empty_like(x)
        pos = x >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        s[~pos] = ex / (1.0 + ex)
        tiny = np.finfo(np.float32).eps
        s = np.clip(s, tiny, 1.0 - tiny)
        v = cfg.output_lo + s * (cfg.output_hi - cfg.output_lo)
        out = v.reshape(raw.shape[0], grid.nz, grid.nx).astype(np.float32)
        return out
