"""Hybrid image model: ``alpha * G(z) + beta * DD(theta)`` with the generator weights frozen."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .autodiff import DimensionError, Tensor, lincomb
from .deep_decoder import DeepDecoderRep, dd_forward
from .generator import GeneratorRep, generator_forward


@dataclass
class HybridRep:
    """Optimisable state {z, theta, alpha, beta}; ``alpha``/``beta`` are 0-d or per-batch arrays."""

    generator: GeneratorRep
    decoder: DeepDecoderRep
    z: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        if not self.generator.frozen:
            raise ValueError("the hybrid model needs a frozen generator")
        if tuple(self.generator.config.output_size) != tuple(self.decoder.config.output_size):
            raise DimensionError(
                f"generator outputs {self.generator.config.output_size}, "
                f"decoder outputs {self.decoder.config.output_size}")
        self.z = np.asarray(self.z, dtype=np.float64)
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        self.beta = np.asarray(self.beta, dtype=np.float64)

    def leaves(self) -> dict[str, np.ndarray]:
        """The optimisable state, flattened to named arrays."""
        out = {"z": self.z, "alpha": self.alpha, "beta": self.beta}
        out.update({f"theta.{k}": v for k, v in self.decoder.theta.items()})
        return out

    def with_leaves(self, leaves: dict[str, np.ndarray]) -> "HybridRep":
        theta = {k[len("theta."):]: v for k, v in leaves.items() if k.startswith("theta.")}
        return dataclasses.replace(self, decoder=self.decoder.replace(theta=theta), z=leaves["z"],
                                   alpha=leaves["alpha"], beta=leaves["beta"])

    def tensors(self) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad=True) for k, v in self.leaves().items()}


def hybrid_init(generator: GeneratorRep, decoder: DeepDecoderRep, z, alpha=0.5, beta=0.5) -> HybridRep:
    z = np.asarray(z, dtype=np.float64)
    lead = z.shape[:-1]
    return HybridRep(generator, decoder, z, np.full(lead, float(alpha)), np.full(lead, float(beta)))


def components(rep: HybridRep, params: dict[str, Tensor] | None = None) -> tuple[Tensor, Tensor]:
    """The generator and decoder images before mixing."""
    if params is None:
        params = {k: Tensor(v) for k, v in rep.leaves().items()}
    theta = {k[len("theta."):]: v for k, v in params.items() if k.startswith("theta.")}
    g = generator_forward(rep.generator, params["z"])
    d = dd_forward(rep.decoder, theta)
    if g.shape != d.shape:
        raise DimensionError(f"generator image {g.shape} and decoder image {d.shape} differ")
    return g, d


def hybrid_forward(rep: HybridRep, params: dict[str, Tensor] | None = None) -> Tensor:
    if params is None:
        params = {k: Tensor(v) for k, v in rep.leaves().items()}
    g, d = components(rep, params)
    return lincomb(params["alpha"], g, params["beta"], d)


COEFFICIENTS = 2


def count_parameters(latent_dim: int, decoder_params: int, coefficients: bool = True) -> int:
    """Optimisable parameters of a hybrid from its component sizes.

    ``coefficients=False`` leaves alpha and beta out, the way parameter
    tables usually report the model.
    """
    return latent_dim + decoder_params + (COEFFICIENTS if coefficients else 0)


def hybrid_param_count(rep: HybridRep) -> int:
    """|z| + |theta| + 2 per image (alpha and beta are counted)."""
    return count_parameters(rep.generator.config.latent.dim, rep.decoder.param_count())


def table_convention_count(rep: HybridRep) -> int:
    """Same count without alpha and beta."""
    return count_parameters(rep.generator.config.latent.dim, rep.decoder.param_count(), coefficients=False)


def mixture_report(alpha: float, beta: float) -> tuple[float, float, float]:
    """(alpha, beta, alpha share); the share is NaN when both coefficients vanish."""
    alpha, beta = float(alpha), float(beta)
    denom = abs(alpha) + abs(beta)
    share = alpha / denom if denom > 0 else math.nan
    return alpha, beta, share
