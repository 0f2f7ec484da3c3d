"""Small pretrained decoder G(z) used as the learned image prior.

The decoder shares the Deep Decoder's layer family; a linear projection maps
the latent code to the low-resolution seed tensor.  Weights are fit by
generative latent optimisation (GLO): decoder weights and one latent per
training image are optimised jointly under a squared reconstruction loss.
"""

from __future__ import annotations

import dataclasses
import hashlib
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import weights as wfile
from .autodiff import Tape, Tensor, conv1x1, reshape, sub, sum_squares
from .deep_decoder import decode, init_stack, layer_param_names, param_count
from .errors import ConfigError
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)

UNIFORM = "uniform"
GAUSSIAN = "gaussian"


@dataclass(frozen=True)
class LatentSpec:
    dim: int = 64
    distribution: str = UNIFORM
    sigma: float = 0.1

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigError(f"latent dim must be >= 1, got {self.dim}")
        if self.distribution not in (UNIFORM, GAUSSIAN):
            raise ConfigError(f"unknown latent distribution {self.distribution!r}")
        if self.distribution == GAUSSIAN and not self.sigma > 0:
            raise ConfigError("gaussian latent needs sigma > 0")

    def to_dict(self) -> dict:
        return {"dim": self.dim, "distribution": self.distribution, "sigma": self.sigma}

    @classmethod
    def from_dict(cls, d: dict) -> "LatentSpec":
        return cls(int(d["dim"]), str(d["distribution"]), float(d.get("sigma", 0.1)))

    def project(self, z: np.ndarray) -> np.ndarray:
        """Pull latents back onto the support: clip to the cube, or onto the sigma*sqrt(dim) ball."""
        if self.distribution == UNIFORM:
            return np.clip(z, -1.0, 1.0)
        radius = self.sigma * np.sqrt(self.dim)
        norms = np.linalg.norm(z, axis=-1, keepdims=True)
        return z * np.minimum(1.0, radius / np.maximum(norms, 1e-300))


def sample_latent(spec: LatentSpec, seed: int, count: int | None = None) -> np.ndarray:
    rng = np.random.default_rng(seed)
    shape = (spec.dim,) if count is None else (count, spec.dim)
    if spec.distribution == UNIFORM:
        return rng.uniform(-1.0, 1.0, size=shape)
    return rng.normal(0.0, spec.sigma, size=shape)


@dataclass(frozen=True)
class GeneratorConfig:
    latent: LatentSpec = LatentSpec()
    channels: int = 32
    layers: int = 3
    output_size: tuple[int, int] = (64, 64)

    def __post_init__(self):
        if self.channels < 1 or self.layers < 1:
            raise ConfigError("generator needs channels >= 1 and layers >= 1")
        H, W = self.output_size
        f = 2 ** self.layers
        if H % f or W % f or H < f or W < f:
            raise ConfigError(f"output size {H}x{W} is not divisible by 2^{self.layers}")
        object.__setattr__(self, "output_size", (int(H), int(W)))

    @property
    def seed_shape(self) -> tuple[int, int, int]:
        H, W = self.output_size
        return self.channels, H >> self.layers, W >> self.layers

    def to_dict(self) -> dict:
        return {"latent": self.latent.to_dict(), "channels": self.channels,
                "layers": self.layers, "output_size": list(self.output_size)}

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        return cls(LatentSpec.from_dict(d["latent"]), int(d["channels"]), int(d["layers"]),
                   tuple(d["output_size"]))


def generator_param_count(config: GeneratorConfig) -> int:
    k, h, w = config.seed_shape
    return k * h * w * config.latent.dim + param_count(config.channels, config.layers)


@dataclass
class GeneratorRep:
    """Decoder weights phi; ``frozen`` reps never hand phi out as differentiable leaves.

    ``phi`` arrays may carry a leading batch axis (one weight copy per image)
    when they are being adapted per image.
    """

    config: GeneratorConfig
    phi: dict[str, np.ndarray]
    frozen: bool = True
    provenance: dict = field(default_factory=dict)
    training_log: list[float] = field(default_factory=list)
    training_latents: np.ndarray | None = field(default=None, repr=False)

    @property
    def latent_spec(self) -> LatentSpec:
        return self.config.latent

    def param_count(self) -> int:
        return generator_param_count(self.config)

    def tensors(self, requires_grad: bool | None = None) -> dict[str, Tensor]:
        rg = (not self.frozen) if requires_grad is None else requires_grad
        if self.frozen and rg:
            raise ValueError("frozen generator weights cannot be differentiable leaves")
        return {k: Tensor(v, requires_grad=rg) for k, v in self.phi.items()}

    def replace(self, **changes) -> "GeneratorRep":
        return dataclasses.replace(self, **changes)

    def phi_digest(self) -> str:
        h = hashlib.sha256()
        for k in sorted(self.phi):
            h.update(k.encode())
            h.update(np.ascontiguousarray(self.phi[k], dtype="<f8").tobytes())
        return h.hexdigest()


def generator_init(config: GeneratorConfig, seed: int) -> GeneratorRep:
    rng = np.random.default_rng(seed)
    k, h, w = config.seed_shape
    phi = {"proj": rng.standard_normal((k * h * w, config.latent.dim)) / np.sqrt(config.latent.dim)}
    phi.update(init_stack(rng, config.channels, config.layers))
    return GeneratorRep(config, phi, frozen=False, provenance={"init_seed": seed})


def generator_forward(rep: GeneratorRep, z: Tensor, params: dict[str, Tensor] | None = None) -> Tensor:
    """Render ``G(z)``; ``z`` has shape ``[..., dim]``, output ``[..., 3, H, W]`` in (0, 1)."""
    dim = rep.config.latent.dim
    if z.shape[-1:] != (dim,):
        raise ConfigError(f"latent has shape {z.shape}, generator expects trailing dim {dim}")
    if params is None:
        params = rep.tensors()
    lead = z.shape[:-1]
    seed = conv1x1(reshape(z, lead + (dim, 1, 1)), params["proj"])
    seed = reshape(seed, seed.shape[:-3] + rep.config.seed_shape)
    return decode(seed, params, rep.config.layers)


def train_glo(dataset: Sequence[np.ndarray], config: GeneratorConfig, epochs: int, seed: int,
              batch_size: int = 16, lr: float = 5e-3, lr_latent: float = 1e-2,
              latent_noise: float = 0.0, on_epoch: Callable[[int, float], None] | None = None) -> GeneratorRep:
    """Fit decoder weights and per-image latents jointly; returns a frozen rep.

    ``latent_noise`` adds N(0, latent_noise^2) jitter to each latent before
    decoding, which keeps the decoder smooth between the training codes so
    that latent search from a random start stays on plausible images.

    ``training_log`` on the result holds the mean per-image squared error of
    every epoch, measured on the minibatches as they were visited, and
    ``training_latents`` the fitted code of every training image.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    shape = np.shape(dataset[0])
    if any(np.shape(x) != shape for x in dataset):
        raise ValueError("dataset images disagree in shape")
    H, W = config.output_size
    if shape != (3, H, W):
        raise ValueError(f"dataset images have shape {shape}, generator outputs {(3, H, W)}")
    if epochs < 1:
        raise ValueError("epochs must be >= 1")

    data = np.stack([np.asarray(x, dtype=np.float64) for x in dataset])
    N = len(data)
    rng = np.random.default_rng(seed)
    rep = generator_init(config, int(rng.integers(2**63)))
    spec = config.latent
    latents = spec.project(sample_latent(spec, int(rng.integers(2**63)), count=N))
    phi = rep.phi
    opt_phi = AdamState(lr=lr)
    opt_z = AdamState(lr=lr_latent)
    names = ["proj"] + layer_param_names(config.layers)
    losses = []

    for epoch in range(epochs):
        order = rng.permutation(N)
        total = 0.0
        for start in range(0, N, batch_size):
            idx = order[start:start + batch_size]
            params = {k: Tensor(phi[k], requires_grad=True) for k in names}
            jitter = rng.standard_normal((len(idx), spec.dim)) * latent_noise if latent_noise else 0.0
            z = Tensor(latents[idx] + jitter, requires_grad=True)
            with Tape() as tape:
                out = generator_forward(rep, z, params)
                err = sum_squares(sub(out, Tensor(data[idx])))
                grads = tape.backward(err, [z] + [params[k] for k in names])
            total += err.item()
            scale = 1.0 / len(idx)
            phi, _ = adam_step(opt_phi, phi, {k: g * scale for k, g in zip(names, grads[1:])})
            gz = np.zeros_like(latents)
            gz[idx] = grads[0]
            new, _ = adam_step(opt_z, {"z": latents}, {"z": gz})
            latents = spec.project(new["z"])
        losses.append(total / N)
        if on_epoch is not None:
            on_epoch(epoch, losses[-1])
        log.debug("glo epoch %d loss %.6f", epoch, losses[-1])

    provenance = {"train_seed": seed, "epochs": epochs, "images": N, "batch_size": batch_size,
                  "lr": lr, "lr_latent": lr_latent, "latent_noise": latent_noise}
    return GeneratorRep(config, phi, frozen=True, provenance=provenance, training_log=losses,
                        training_latents=latents)


def save_weights(rep: GeneratorRep, path) -> None:
    wfile.write(path, "generator", rep.config.to_dict(), rep.phi, rep.provenance)


def load_weights(path, expected: GeneratorConfig | None = None) -> GeneratorRep:
    """Load a frozen generator; ``expected`` guards against architecture mismatches."""
    header, tensors = wfile.read(path)
    if header.get("kind") != "generator":
        raise ConfigError(f"weight file holds a {header.get('kind')!r}, not a generator")
    config = GeneratorConfig.from_dict(header["config"])
    if expected is not None and expected != config:
        raise ConfigError(f"weight file architecture {config.to_dict()} differs from expected {expected.to_dict()}")
    want = ["proj"] + layer_param_names(config.layers)
    if sorted(tensors) != sorted(want):
        raise ConfigError(f"weight file tensors {sorted(tensors)} do not match the architecture")
    return GeneratorRep(config, tensors, frozen=True, provenance=header.get("provenance", {}))
