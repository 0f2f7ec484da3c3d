"""Untrained, underparameterised Deep Decoder image model."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import weights as wfile
from .autodiff import Tensor, channel_norm, conv1x1, relu, sigmoid, upsample_bilinear_2x
from .errors import ConfigError

OUT_CHANNELS = 3
NORM_EPS = 1e-6
WIDTH_LADDER = (8, 16, 32, 48, 64, 96, 128)


class NoFeasibleWidth(ValueError):
    """No ladder width keeps the decoder below the measurement count."""


@dataclass(frozen=True)
class DeepDecoderConfig:
    channels: int = 64
    layers: int = 4
    output_size: tuple[int, int] = (64, 64)
    seed: int = 0

    def __post_init__(self):
        if self.channels < 1 or self.layers < 1:
            raise ConfigError(f"need channels >= 1 and layers >= 1, got k={self.channels}, d={self.layers}")
        H, W = self.output_size
        f = 2 ** self.layers
        if H % f or W % f or H < f or W < f:
            raise ConfigError(f"output size {H}x{W} is not divisible by 2^{self.layers}")
        object.__setattr__(self, "output_size", (int(H), int(W)))

    @property
    def input_size(self) -> tuple[int, int]:
        H, W = self.output_size
        return H >> self.layers, W >> self.layers

    def to_dict(self) -> dict:
        return {"channels": self.channels, "layers": self.layers,
                "output_size": list(self.output_size), "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "DeepDecoderConfig":
        return cls(channels=int(d["channels"]), layers=int(d["layers"]),
                   output_size=tuple(d["output_size"]), seed=int(d.get("seed", 0)))


def param_count(channels: int, layers: int = 4) -> int:
    """Optimisable parameters: per-layer k*k convs and k-wide scale/shift, plus the 3*k output mix."""
    return layers * channels**2 + 2 * layers * channels + OUT_CHANNELS * channels


def layer_param_names(layers: int) -> list[str]:
    names = []
    for i in range(layers):
        names += [f"conv{i}", f"scale{i}", f"shift{i}"]
    return names + ["out"]


def init_stack(rng: np.random.Generator, channels: int, layers: int) -> dict[str, np.ndarray]:
    """Weights N(0, 1/k), norm scale 1 and shift 0."""
    std = 1.0 / np.sqrt(channels)
    params = {}
    for i in range(layers):
        params[f"conv{i}"] = rng.standard_normal((channels, channels)) * std
        params[f"scale{i}"] = np.ones(channels)
        params[f"shift{i}"] = np.zeros(channels)
    params["out"] = rng.standard_normal((OUT_CHANNELS, channels)) * std
    return params


def decode(h: Tensor, params: dict[str, Tensor], layers: int) -> Tensor:
    """conv -> relu -> upsample -> norm, ``layers`` times, then a pixelwise mix to RGB and a sigmoid."""
    for i in range(layers):
        h = conv1x1(h, params[f"conv{i}"])
        h = relu(h)
        h = upsample_bilinear_2x(h)
        h = channel_norm(h, params[f"scale{i}"], params[f"shift{i}"], NORM_EPS)
    return sigmoid(conv1x1(h, params["out"]))


@dataclass
class DeepDecoderRep:
    """Fixed seed input plus the optimisable weights theta.

    A batched rep stacks several independent decoders along a leading axis
    of every array; ``seeds`` then lists one seed per slice.
    """

    config: DeepDecoderConfig
    fixed_input: np.ndarray
    theta: dict[str, np.ndarray]
    seeds: tuple[int, ...] = field(default=())

    @property
    def batch(self) -> int | None:
        return self.fixed_input.shape[0] if self.fixed_input.ndim == 4 else None

    def param_count(self) -> int:
        return param_count(self.config.channels, self.config.layers)

    def tensors(self, requires_grad: bool = True) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad=requires_grad) for k, v in self.theta.items()}

    def replace(self, **changes) -> "DeepDecoderRep":
        return dataclasses.replace(self, **changes)

    def select(self, i: int) -> "DeepDecoderRep":
        if self.batch is None:
            raise ValueError("rep is not batched")
        cfg = dataclasses.replace(self.config, seed=self.seeds[i])
        return DeepDecoderRep(cfg, self.fixed_input[i].copy(),
                              {k: v[i].copy() for k, v in self.theta.items()}, (self.seeds[i],))


def _init_one(config: DeepDecoderConfig, seed: int):
    rng = np.random.default_rng(seed)
    h, w = config.input_size
    fixed = rng.standard_normal((config.channels, h, w))
    return fixed, init_stack(rng, config.channels, config.layers)


def dd_init(config: DeepDecoderConfig, seeds: Sequence[int] | None = None) -> DeepDecoderRep:
    """Draw a decoder from ``config.seed``, or a batch of decoders, one per entry of ``seeds``."""
    if seeds is None:
        fixed, theta = _init_one(config, config.seed)
        return DeepDecoderRep(config, fixed, theta, (config.seed,))
    seeds = tuple(int(s) for s in seeds)
    if not seeds:
        raise ValueError("seeds must be non-empty")
    parts = [_init_one(config, s) for s in seeds]
    fixed = np.stack([p[0] for p in parts])
    theta = {k: np.stack([p[1][k] for p in parts]) for k in parts[0][1]}
    return DeepDecoderRep(config, fixed, theta, seeds)


def dd_forward(rep: DeepDecoderRep, params: dict[str, Tensor] | None = None) -> Tensor:
    """Render the decoder's image(s), shape ``[..., 3, H, W]`` with values in (0, 1).

    Pass ``params`` (usually from ``rep.tensors()``) to differentiate w.r.t. theta.
    """
    if params is None:
        params = rep.tensors(requires_grad=False)
    return decode(Tensor(rep.fixed_input), params, rep.config.layers)


def dd_choose_k(m: int, layers: int = 4, ladder: Sequence[int] = WIDTH_LADDER) -> int:
    """Largest ladder width whose parameter count stays strictly below ``m``."""
    feasible = [k for k in ladder if param_count(k, layers) < m]
    if not feasible:
        raise NoFeasibleWidth(
            f"m={m} admits no width from {tuple(ladder)} "
            f"(smallest needs {param_count(min(ladder), layers)} parameters)")
    return max(feasible)


def save_decoder(rep: DeepDecoderRep, path) -> None:
    tensors = {"fixed_input": rep.fixed_input, **rep.theta}
    wfile.write(path, "deep_decoder", rep.config.to_dict(), tensors, {"seeds": list(rep.seeds)})


def load_decoder(path, expected: DeepDecoderConfig | None = None) -> DeepDecoderRep:
    header, tensors = wfile.read(path)
    if header.get("kind") != "deep_decoder":
        raise ConfigError(f"weight file holds a {header.get('kind')!r}, not a deep decoder")
    config = DeepDecoderConfig.from_dict(header["config"])
    if expected is not None and expected != config:
        raise ConfigError(f"weight file architecture {config.to_dict()} differs from expected {expected.to_dict()}")
    fixed = tensors.pop("fixed_input")
    seeds = tuple(header.get("provenance", {}).get("seeds", [config.seed]))
    return DeepDecoderRep(config, fixed, tensors, seeds)
