"""Masking generator and scoring critic as parameterized forward functions.

The generator stacks bidirectional LSTM layers, a LeakyReLU dense layer and
a sigmoid output per frequency bin, floored to keep the mask away from total
silence. The critic is a small CNN: four valid 5x5 convolutions, global
average pooling (so any input length maps to a fixed feature size), and
three dense layers ending in one linear node.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import AutodiffError, Tensor
from . import nn


@dataclass(frozen=True)
class GeneratorSpec:
    blstm_layers: int = 2
    blstm_width: int = 200  # per direction
    dense_width: int = 300
    output_bins: int = 257
    leaky_slope: float = 0.3


@dataclass(frozen=True)
class DiscriminatorSpec:
    conv_layers: int = 4
    filters: int = 15
    kernel: tuple[int, int] = (5, 5)
    dense_widths: tuple[int, ...] = (50, 10)
    leaky_slope: float = 0.3

    @property
    def pooled_dim(self) -> int:
        return self.filters

    def min_frames(self) -> int:
        return self.conv_layers * (self.kernel[0] - 1) + 1

    def min_bins(self) -> int:
        return self.conv_layers * (self.kernel[1] - 1) + 1


@dataclass(frozen=True)
class FeatureConfig:
    """Compression applied to magnitudes before either network sees them."""

    transform: str = "power"  # "magnitude" | "power" | "log1p"
    power_exponent: float = 0.3

    def __post_init__(self):
        if self.transform not in ("magnitude", "power", "log1p"):
            raise ValueError(f"unknown input transform '{self.transform}'")


def transform_array(mag: np.ndarray, cfg: FeatureConfig) -> np.ndarray:
    if cfg.transform == "power":
        return mag**cfg.power_exponent
    if cfg.transform == "log1p":
        return np.log1p(mag)
    return mag


def transform_tensor(t: Tensor, cfg: FeatureConfig) -> Tensor:
    if cfg.transform == "power":
        return ad.pow_scalar(t, cfg.power_exponent)
    if cfg.transform == "log1p":
        return ad.log1p(t)
    return t


def init_generator(spec: GeneratorSpec, rng: np.random.Generator) -> dict[str, Tensor]:
    params: dict[str, np.ndarray] = {}
    in_dim = spec.output_bins
    for layer in range(spec.blstm_layers):
        for direction in ("fwd", "bwd"):
            for k, v in nn.init_lstm_direction(rng, in_dim, spec.blstm_width).items():
                params[f"blstm{layer}.{direction}.{k}"] = v
        in_dim = 2 * spec.blstm_width
    params["fc.W"] = nn.uniform_init(rng, (in_dim, spec.dense_width), in_dim)
    params["fc.b"] = np.zeros(spec.dense_width)
    params["out.W"] = nn.uniform_init(rng, (spec.dense_width, spec.output_bins), spec.dense_width)
    params["out.b"] = np.zeros(spec.output_bins)
    return {k: Tensor(v, requires_grad=True) for k, v in params.items()}


def generator_forward(
    params: dict[str, Tensor],
    spec: GeneratorSpec,
    features,
    mask_floor: float = 0.05,
) -> Tensor:
    """Per-frame mask in [mask_floor, 1] for features[T, bins]."""
    x = ad.as_tensor(features)
    if x.shape[1] != spec.output_bins:
        raise AutodiffError(
            f"generator expects {spec.output_bins} bins, got {x.shape[1]}"
        )
    for layer in range(spec.blstm_layers):
        fwd = {k: params[f"blstm{layer}.fwd.{k}"] for k in ("W", "U", "b")}
        bwd = {k: params[f"blstm{layer}.bwd.{k}"] for k in ("W", "U", "b")}
        x = nn.bilstm_forward(x, fwd, bwd)
    h = ad.leaky_relu(nn.dense(x, params["fc.W"], params["fc.b"]), spec.leaky_slope)
    m = ad.sigmoid(nn.dense(h, params["out.W"], params["out.b"]))
    return ad.clamp_min(m, mask_floor)


def init_discriminator(spec: DiscriminatorSpec, rng: np.random.Generator) -> dict[str, Tensor]:
    kh, kw = spec.kernel
    params: dict[str, np.ndarray] = {}
    in_ch = 1
    for layer in range(spec.conv_layers):
        fan_in = in_ch * kh * kw
        params[f"conv{layer}.K"] = nn.uniform_init(rng, (spec.filters, in_ch, kh, kw), fan_in)
        params[f"conv{layer}.b"] = np.zeros(spec.filters)
        in_ch = spec.filters
    widths = (spec.pooled_dim, *spec.dense_widths, 1)
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        params[f"dense{i}.W"] = nn.uniform_init(rng, (a, b), a)
        params[f"dense{i}.b"] = np.zeros(b)
    return {k: Tensor(v, requires_grad=True) for k, v in params.items()}


def discriminator_forward(
    params: dict[str, Tensor], spec: DiscriminatorSpec, mag
) -> Tensor:
    """Unbounded scalar score for a magnitude map mag[T, bins]."""
    x = ad.as_tensor(mag)
    frames, bins = x.shape
    if frames < spec.min_frames() or bins < spec.min_bins():
        raise AutodiffError(
            f"discriminator input {x.shape} too small: needs at least "
            f"{spec.min_frames()} frames and {spec.min_bins()} bins"
        )
    x = ad.reshape(x, (1, frames, bins))
    for layer in range(spec.conv_layers):
        x = ad.conv2d(x, params[f"conv{layer}.K"])
        bias = ad.reshape(params[f"conv{layer}.b"], (spec.filters, 1, 1))
        x = ad.leaky_relu(ad.add(x, bias), spec.leaky_slope)
    h = ad.reshape(ad.global_avg_pool2d(x), (1, spec.pooled_dim))
    n_dense = len(spec.dense_widths) + 1
    for i in range(n_dense):
        h = nn.dense(h, params[f"dense{i}.W"], params[f"dense{i}.b"])
        if i < n_dense - 1:
            h = ad.leaky_relu(h, spec.leaky_slope)
    return ad.reshape(h, ())


def parameter_count(params: dict[str, Tensor]) -> int:
    return sum(p.size for p in params.values())


def generator_parameter_count(spec: GeneratorSpec) -> int:
    """Closed-form size of the generator parameter set."""
    total = 0
    in_dim = spec.output_bins
    for _ in range(spec.blstm_layers):
        per_direction = (in_dim + spec.blstm_width) * 4 * spec.blstm_width + 4 * spec.blstm_width
        total += 2 * per_direction
        in_dim = 2 * spec.blstm_width
    total += in_dim * spec.dense_width + spec.dense_width
    total += spec.dense_width * spec.output_bins + spec.output_bins
    return total


def discriminator_parameter_count(spec: DiscriminatorSpec) -> int:
    kh, kw = spec.kernel
    total = 0
    in_ch = 1
    for _ in range(spec.conv_layers):
        total += spec.filters * in_ch * kh * kw + spec.filters
        in_ch = spec.filters
    widths = (spec.pooled_dim, *spec.dense_widths, 1)
    for a, b in zip(widths[:-1], widths[1:]):
        total += a * b + b
    return total
