"""Linear forward operators and the additive Gaussian noise model ``y = A x + noise``.

Images ``[3, H, W]`` are flattened channel-major, row-major (numpy C order)
before an operator is applied.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, apply_linear, matvec, reshape
from .errors import ConfigError

MAX_DENSE_ENTRIES = 10**8


class LinearOperator:
    """A fixed linear map from images ``[..., 3, H, W]`` to measurements ``[..., m]``."""

    kind: str
    m: int
    n: int

    def apply(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def adjoint(self, u: np.ndarray) -> np.ndarray:
        """``A^T u`` as flat arrays ``[..., m] -> [..., n]``."""
        raise NotImplementedError

    def forward_array(self, x: np.ndarray) -> np.ndarray:
        return self.apply(Tensor(x)).data

    def matrix(self) -> np.ndarray:
        """Materialise the operator column by column (small problems only)."""
        eye = np.eye(self.n)
        return np.stack([self.forward_array(e.reshape(self.image_shape)) for e in eye], axis=1)

    def to_dict(self) -> dict:
        raise NotImplementedError

    def _flat(self, x: Tensor) -> Tensor:
        if x.shape[-3:] != self.image_shape:
            raise ConfigError(f"operator expects images {self.image_shape}, got {x.shape}")
        return reshape(x, x.shape[:-3] + (self.n,))


class GaussianOperator(LinearOperator):
    """Dense ``m x n`` matrix with i.i.d. N(0, 1/m) entries drawn from ``seed``."""

    kind = "gaussian"

    def __init__(self, m: int, image_shape: tuple[int, int, int], seed: int,
                 max_entries: int = MAX_DENSE_ENTRIES):
        n = int(np.prod(image_shape))
        if m < 1 or n < 1:
            raise ConfigError(f"need m >= 1 and n >= 1, got m={m}, n={n}")
        if m * n > max_entries:
            raise MemoryError(f"dense {m}x{n} operator exceeds the {max_entries}-entry cap")
        self.m, self.n, self.seed = int(m), n, int(seed)
        self.image_shape = tuple(image_shape)
        rng = np.random.default_rng(self.seed)
        self.A = Tensor(rng.standard_normal((self.m, n)) / np.sqrt(self.m))

    def apply(self, x: Tensor) -> Tensor:
        return matvec(self.A, self._flat(x))

    def adjoint(self, u):
        return np.asarray(u) @ self.A.data

    def matrix(self):
        return self.A.data.copy()

    def to_dict(self):
        return {"kind": self.kind, "m": self.m, "image_shape": list(self.image_shape), "seed": self.seed}


class SuperresOperator(LinearOperator):
    """Per-channel ``f x f`` box averaging; ``m = 3HW / f^2``."""

    kind = "superres"

    def __init__(self, factor: int, image_shape: tuple[int, int, int]):
        C, H, W = image_shape
        if factor < 1 or H % factor or W % factor:
            raise ConfigError(f"image {H}x{W} is not divisible by superresolution factor {factor}")
        self.factor = int(factor)
        self.image_shape = tuple(image_shape)
        self.n = C * H * W
        self.m = self.n // factor**2

    def _down(self, a: np.ndarray) -> np.ndarray:
        f = self.factor
        C, H, W = self.image_shape
        lead = a.shape[:-1]
        b = a.reshape(lead + (C, H // f, f, W // f, f)).mean(axis=(-3, -1))
        return b.reshape(lead + (self.m,))

    def adjoint(self, u):
        f = self.factor
        C, H, W = self.image_shape
        u = np.asarray(u)
        lead = u.shape[:-1]
        b = u.reshape(lead + (C, H // f, 1, W // f, 1)) / f**2
        return np.broadcast_to(b, lead + (C, H // f, f, W // f, f)).reshape(lead + (self.n,))

    def apply(self, x):
        return apply_linear(self._flat(x), self._down, self.adjoint)

    def to_dict(self):
        return {"kind": self.kind, "factor": self.factor, "image_shape": list(self.image_shape)}


class IdentityOperator(LinearOperator):
    kind = "identity"

    def __init__(self, image_shape: tuple[int, int, int]):
        self.image_shape = tuple(image_shape)
        self.n = self.m = int(np.prod(image_shape))

    def apply(self, x):
        return self._flat(x)

    def adjoint(self, u):
        return np.asarray(u, dtype=np.float64).copy()

    def matrix(self):
        return np.eye(self.n)

    def to_dict(self):
        return {"kind": self.kind, "image_shape": list(self.image_shape)}


def gaussian_operator(m: int, n_or_shape, seed: int, max_entries: int = MAX_DENSE_ENTRIES) -> GaussianOperator:
    shape = (n_or_shape, 1, 1) if np.isscalar(n_or_shape) else tuple(n_or_shape)
    return GaussianOperator(m, shape, seed, max_entries)


def superres_operator(factor: int, image_shape) -> SuperresOperator:
    return SuperresOperator(factor, tuple(image_shape))


def operator_from_dict(d: dict) -> LinearOperator:
    kind = d.get("kind")
    shape = tuple(d["image_shape"])
    if kind == "gaussian":
        return GaussianOperator(int(d["m"]), shape, int(d["seed"]))
    if kind == "superres":
        return SuperresOperator(int(d["factor"]), shape)
    if kind == "identity":
        return IdentityOperator(shape)
    raise ConfigError(f"unknown operator kind {kind!r}")


def add_noise(y: np.ndarray, level: float = 0.1, seed: int = 0) -> np.ndarray:
    """Add N(0, level^2/m) noise per entry, so that E||noise||^2 = level^2 for each length-m row."""
    if level < 0:
        raise ValueError("noise level must be >= 0")
    y = np.asarray(y, dtype=np.float64)
    if level == 0:
        return y.copy()
    m = y.shape[-1]
    rng = np.random.default_rng(seed)
    return y + rng.standard_normal(y.shape) * (level / np.sqrt(m))


@dataclass
class MeasurementTask:
    """Observation ``y`` of one image (``y: [m]``) or a batch (``y: [B, m]``)."""

    operator: LinearOperator
    y: np.ndarray
    noise_level: float = 0.0
    noise_seeds: tuple[int, ...] = ()
    ground_truth: np.ndarray | None = None
    image_ids: tuple[str, ...] = ()
    sources: list = field(default_factory=list)

    @property
    def batch(self) -> int | None:
        return self.y.shape[0] if self.y.ndim == 2 else None

    def to_dict(self) -> dict:
        """Replayable description: operator, noise, and image sources, never the dense matrix."""
        return {"operator": self.operator.to_dict(), "noise_level": self.noise_level,
                "noise_seeds": list(self.noise_seeds), "image_ids": list(self.image_ids),
                "sources": list(self.sources)}


def synthesize_task(operator: LinearOperator, images: np.ndarray, noise_level: float,
                    noise_seeds, image_ids=(), sources=()) -> MeasurementTask:
    """Measure ``images`` (one ``[3,H,W]`` or a stack ``[B,3,H,W]``) once, adding per-image noise."""
    images = np.asarray(images, dtype=np.float64)
    clean = operator.forward_array(images)
    seeds = (noise_seeds,) if np.isscalar(noise_seeds) else tuple(int(s) for s in noise_seeds)
    if clean.ndim == 1:
        y = add_noise(clean, noise_level, seeds[0])
    else:
        if len(seeds) != clean.shape[0]:
            raise ValueError("need one noise seed per image")
        y = np.stack([add_noise(row, noise_level, s) for row, s in zip(clean, seeds)])
    return MeasurementTask(operator, y, noise_level, seeds, images, tuple(image_ids), list(sources))
