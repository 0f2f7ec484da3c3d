"""First-order solvers for ``min ||A H(params) - y||^2`` under each image model.

All solvers accept batched tasks (``y: [B, m]``) with matching batched reps;
the summed loss decouples across images, and Adam is coordinatewise, so a
batch is B independent runs sharing one pass over ``A``.
"""

from __future__ import annotations

import csv
import dataclasses
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import NonFiniteError, Tape, Tensor, sub, sum_squares
from .deep_decoder import DeepDecoderRep, dd_forward
from .errors import InversionError
from .generator import GeneratorRep, generator_forward
from .hybrid import HybridRep, hybrid_forward
from .measurement import MeasurementTask
from .optim import AdamState, NonFiniteGradient, adam_step

__all__ = ["AdamState", "adam_step", "InversionConfig", "InversionResult", "Trajectory", "PROFILES",
           "invert_single", "invert_dd", "invert_generator", "invert_hybrid", "invert_gan_as_dip"]

PROFILES = {"paper": (500, 5000), "ci": (50, 450)}


@dataclass(frozen=True)
class InversionConfig:
    n_pre: int = 500
    n: int = 5000
    lr: float = 1e-2
    lr_weights: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.n_pre < 0 or self.n < 0:
            raise ValueError("iteration counts must be >= 0")

    @property
    def n_single(self) -> int:
        """Global budget shared by every model, so comparisons stay fair."""
        return self.n_pre + self.n

    @classmethod
    def profile(cls, name: str, **overrides) -> "InversionConfig":
        n_pre, n = PROFILES[name]
        return cls(n_pre=n_pre, n=n, **overrides)


@dataclass
class Trajectory:
    """Per-iteration log; loss entries are per-image arrays for batched runs."""

    phase: list[str] = field(default_factory=list)
    loss: list[np.ndarray] = field(default_factory=list)
    loss_gen: list[np.ndarray] = field(default_factory=list)
    loss_dd: list[np.ndarray] = field(default_factory=list)
    alpha: list[np.ndarray] = field(default_factory=list)
    beta: list[np.ndarray] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    grad_steps: int = 0
    _t0: float = field(default_factory=time.perf_counter, repr=False)

    def log(self, phase, loss=math.nan, loss_gen=math.nan, loss_dd=math.nan, alpha=math.nan, beta=math.nan):
        self.phase.append(phase)
        self.loss.append(np.asarray(loss, dtype=np.float64))
        self.loss_gen.append(np.asarray(loss_gen, dtype=np.float64))
        self.loss_dd.append(np.asarray(loss_dd, dtype=np.float64))
        self.alpha.append(np.asarray(alpha, dtype=np.float64))
        self.beta.append(np.asarray(beta, dtype=np.float64))
        self.seconds.append(time.perf_counter() - self._t0)

    def __len__(self) -> int:
        return len(self.phase)

    def losses(self, index: int | None = None, phase: str | None = None) -> np.ndarray:
        arr = np.asarray([l for p, l in zip(self.phase, self.loss) if phase is None or p == phase])
        return arr[:, index] if index is not None and arr.ndim == 2 else arr

    def write_csv(self, path, index: int | None = None) -> None:
        def pick(v):
            v = np.asarray(v)
            x = float(v[index]) if (index is not None and v.ndim) else float(v) if v.ndim == 0 else float(v.sum())
            return "" if math.isnan(x) else repr(x)

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "phase", "loss", "loss_gen", "loss_dd", "alpha", "beta", "seconds"])
            for i in range(len(self)):
                w.writerow([i, self.phase[i], pick(self.loss[i]), pick(self.loss_gen[i]), pick(self.loss_dd[i]),
                            pick(self.alpha[i]), pick(self.beta[i]), f"{self.seconds[i]:.4f}"])


@dataclass
class InversionResult:
    rep: object
    image: np.ndarray
    final_loss: np.ndarray
    trajectory: Trajectory


def _residual_loss(task: MeasurementTask, image: Tensor) -> tuple[Tensor, np.ndarray]:
    r = sub(task.operator.apply(image), Tensor(task.y))
    return sum_squares(r), (r.data * r.data).sum(axis=-1)


def _guard(fn, trajectory: Trajectory):
    try:
        return fn()
    except (NonFiniteError, NonFiniteGradient, FloatingPointError) as e:
        raise InversionError(f"inversion diverged after {len(trajectory)} iterations: {e}", trajectory) from e


def _check_batch(task: MeasurementTask, lead: tuple[int, ...], what: str) -> None:
    want = () if task.batch is None else (task.batch,)
    if lead != want:
        raise ValueError(f"{what} has batch shape {lead}, task has {want}")


def _dd_step(task, rep: DeepDecoderRep, opt: AdamState):
    params = rep.tensors()
    names = list(params)
    with Tape() as tape:
        loss, per = _residual_loss(task, dd_forward(rep, params))
        grads = tape.backward(loss, [params[k] for k in names])
    theta, _ = adam_step(opt, rep.theta, dict(zip(names, grads)))
    return rep.replace(theta=theta), per


def _gen_step(task, gen: GeneratorRep, z: np.ndarray, opt: AdamState):
    zt = Tensor(z, requires_grad=True)
    with Tape() as tape:
        loss, per = _residual_loss(task, generator_forward(gen, zt))
        (g,) = tape.backward(loss, [zt])
    new, _ = adam_step(opt, {"z": z}, {"z": g})
    return new["z"], per


def invert_dd(task: MeasurementTask, rep: DeepDecoderRep, config: InversionConfig) -> InversionResult:
    """Deep Decoder alone: ``n_single`` uninterrupted Adam steps on theta."""
    _check_batch(task, () if rep.batch is None else (rep.batch,), "decoder")
    traj = Trajectory()
    opt = AdamState(lr=config.lr)

    def run():
        r = rep
        for _ in range(config.n_single):
            r, per = _dd_step(task, r, opt)
            traj.log("single", loss=per)
            traj.grad_steps += 1
        image = dd_forward(r)
        return r, image, _residual_loss(task, image)[1]

    r, image, final = _guard(run, traj)
    return InversionResult(r, image.numpy(), final, traj)


def invert_generator(task: MeasurementTask, gen: GeneratorRep, z0: np.ndarray,
                     config: InversionConfig) -> InversionResult:
    """Latent search with the generator weights frozen; ``rep`` of the result is the fitted latent."""
    if not gen.frozen:
        raise ValueError("generator-only inversion expects a frozen generator")
    _check_batch(task, np.shape(z0)[:-1], "latent")
    traj = Trajectory()
    opt = AdamState(lr=config.lr)

    def run():
        z = np.asarray(z0, dtype=np.float64)
        for _ in range(config.n_single):
            z, per = _gen_step(task, gen, z, opt)
            traj.log("single", loss=per)
            traj.grad_steps += 1
        image = generator_forward(gen, Tensor(z))
        return z, image, _residual_loss(task, image)[1]

    z, image, final = _guard(run, traj)
    return InversionResult(z, image.numpy(), final, traj)


def invert_single(task: MeasurementTask, model: str, config: InversionConfig, *,
                  decoder: DeepDecoderRep | None = None, generator: GeneratorRep | None = None,
                  z0: np.ndarray | None = None) -> InversionResult:
    if model == "dd":
        return invert_dd(task, decoder, config)
    if model == "gan":
        return invert_generator(task, generator, z0, config)
    raise ValueError(f"unknown single model {model!r}")


def invert_hybrid(task: MeasurementTask, rep: HybridRep, config: InversionConfig) -> InversionResult:
    """Pre-invert G and DD separately for ``n_pre`` rounds, reset alpha = beta = 1/2, then fit all jointly.

    The two pre-inversions keep separate Adam states; the joint phase starts
    from fresh moments.
    """
    _check_batch(task, rep.z.shape[:-1], "latent")
    traj = Trajectory()
    opt_z = AdamState(lr=config.lr)
    opt_dd = AdamState(lr=config.lr)
    opt_joint = AdamState(lr=config.lr)

    def run():
        z, dec = rep.z, rep.decoder
        for _ in range(config.n_pre):
            z, per_g = _gen_step(task, rep.generator, z, opt_z)
            dec, per_d = _dd_step(task, dec, opt_dd)
            traj.log("pre", loss_gen=per_g, loss_dd=per_d)
            traj.grad_steps += 2
        h = dataclasses.replace(rep, z=z, decoder=dec, alpha=np.full_like(rep.alpha, 0.5),
                                beta=np.full_like(rep.beta, 0.5))
        for _ in range(config.n):
            params = h.tensors()
            names = list(params)
            with Tape() as tape:
                loss, per = _residual_loss(task, hybrid_forward(h, params))
                grads = tape.backward(loss, [params[k] for k in names])
            traj.log("joint", loss=per, alpha=h.alpha, beta=h.beta)
            new, _ = adam_step(opt_joint, h.leaves(), dict(zip(names, grads)))
            h = h.with_leaves(new)
            traj.grad_steps += 1
        image = hybrid_forward(h)
        return h, image, _residual_loss(task, image)[1]

    h, image, final = _guard(run, traj)
    return InversionResult(h, image.numpy(), final, traj)


def invert_gan_as_dip(task: MeasurementTask, gen: GeneratorRep, z0: np.ndarray,
                      config: InversionConfig) -> InversionResult:
    """Fit z alone for ``n_pre`` steps, then z and every generator weight for ``n`` steps.

    Weights use ``lr_weights``; the latent keeps one Adam state across both
    phases.  For batched tasks each image adapts its own copy of the weights.
    No post-processing is applied.
    """
    _check_batch(task, np.shape(z0)[:-1], "latent")
    frozen = gen if gen.frozen else gen.replace(frozen=True)
    traj = Trajectory()
    opt_z = AdamState(lr=config.lr)
    opt_phi = AdamState(lr=config.lr_weights)

    def run():
        z = np.asarray(z0, dtype=np.float64)
        for _ in range(config.n_pre):
            z, per = _gen_step(task, frozen, z, opt_z)
            traj.log("pre", loss=per)
            traj.grad_steps += 1
        lead = z.shape[:-1]
        phi = {k: np.broadcast_to(v, lead + v.shape).copy() for k, v in frozen.phi.items()}
        live = frozen.replace(phi=phi, frozen=False)
        names = list(phi)
        for _ in range(config.n):
            params = {k: Tensor(live.phi[k], requires_grad=True) for k in names}
            zt = Tensor(z, requires_grad=True)
            with Tape() as tape:
                loss, per = _residual_loss(task, generator_forward(live, zt, params))
                grads = tape.backward(loss, [zt] + [params[k] for k in names])
            traj.log("joint", loss=per)
            new_z, _ = adam_step(opt_z, {"z": z}, {"z": grads[0]})
            new_phi, _ = adam_step(opt_phi, live.phi, dict(zip(names, grads[1:])))
            z, live = new_z["z"], live.replace(phi=new_phi)
            traj.grad_steps += 1
        image = generator_forward(live, Tensor(z))
        return (z, live), image, _residual_loss(task, image)[1]

    out, image, final = _guard(run, traj)
    return InversionResult(out, image.numpy(), final, traj)
