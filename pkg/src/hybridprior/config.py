"""Experiment configuration: a versioned JSON document plus seed derivation.

Every random draw in a sweep (measurement matrices, noise, decoder inits,
latent starts) is derived from the single master ``seed`` and the cell it
belongs to, so a config file fully determines every artifact.
"""

from __future__ import annotations

import dataclasses
import json
import os
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datasets import FAMILIES, ImageDistribution
from .errors import ConfigError
from .generator import GeneratorConfig, LatentSpec
from .inversion import PROFILES

SCHEMA_VERSION = 1
MODELS = ("gan", "dd", "hybrid", "gan-as-dip")
SEED_ENV = "HP_SEED"


def derive_seed(seed: int, *parts) -> int:
    """A 63-bit seed determined by ``seed`` and the (str or int) ``parts`` naming a draw."""
    words = [int(seed) & 0xFFFFFFFF, (int(seed) >> 32) & 0xFFFFFFFF]
    for p in parts:
        words.append(zlib.crc32(p.encode()) if isinstance(p, str) else int(p) & 0xFFFFFFFF)
    state = np.random.SeedSequence(words).generate_state(2, np.uint32)
    return (int(state[0]) << 31 | int(state[1]) >> 1) & (2**63 - 1)


@dataclass(frozen=True)
class ImageSet:
    """``count`` consecutive images of one family starting at index ``start``."""

    family: str = "blobs"
    count: int = 12
    start: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"image family must be one of {FAMILIES}, got {self.family!r}")
        if self.count < 1:
            raise ConfigError("image set count must be >= 1")

    def distribution(self, size: int) -> ImageDistribution:
        return ImageDistribution(self.family, size, self.seed)

    def image_ids(self) -> list[str]:
        return [f"{self.family}/{i}" for i in range(self.start, self.start + self.count)]


@dataclass(frozen=True)
class PriorConfig:
    """Generator architecture and GLO training hyperparameters."""

    latent_dim: int = 64
    distribution: str = "uniform"
    sigma: float = 0.1
    channels: int = 32
    layers: int = 3
    epochs: int = 600
    batch_size: int = 16
    lr: float = 5e-3
    lr_latent: float = 1e-2
    latent_noise: float = 0.7
    seed: int = 1

    def generator_config(self, size: int) -> GeneratorConfig:
        return GeneratorConfig(LatentSpec(self.latent_dim, self.distribution, self.sigma),
                               self.channels, self.layers, (size, size))


@dataclass(frozen=True)
class ExperimentConfig:
    image_size: int = 64
    dataset: ImageSet = ImageSet("blobs", 64, 0, 0)
    prior: PriorConfig = PriorConfig()
    test_sets: tuple[ImageSet, ...] = (ImageSet("blobs", 12, 1000), ImageSet("stripes", 6, 0),
                                       ImageSet("checker", 6, 0))
    m_ladder: tuple[int, ...] = (300, 1000, 3000, 6000)
    models: tuple[str, ...] = MODELS
    noise_level: float = 0.1
    profile: str = "ci"
    dd_layers: int = 4
    seed: int = 0
    weights: str = "prior.hpgw"
    out_dir: str = "runs/sweep"
    sample_m: int | None = None
    jobs: int | None = None
    schema_version: int = SCHEMA_VERSION
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"config schema_version {self.schema_version} is not supported "
                              f"(expected {SCHEMA_VERSION})")
        if self.image_size < 2:
            raise ConfigError("image_size must be >= 2")
        if not self.m_ladder:
            raise ConfigError("m_ladder must list at least one measurement count")
        n = self.n
        for m in self.m_ladder:
            if not 1 <= m <= n:
                raise ConfigError(f"m_ladder entry {m} must satisfy 1 <= m <= n = {n}")
        if not self.models or any(mo not in MODELS for mo in self.models):
            raise ConfigError(f"models must be a nonempty subset of {MODELS}, got {list(self.models)}")
        if len(set(self.models)) != len(self.models):
            raise ConfigError("models must not repeat")
        if self.profile not in PROFILES:
            raise ConfigError(f"profile must be one of {sorted(PROFILES)}, got {self.profile!r}")
        if self.noise_level < 0:
            raise ConfigError("noise_level must be >= 0")
        if self.jobs is not None and self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.sample_m is not None and self.sample_m not in self.m_ladder:
            raise ConfigError(f"sample_m {self.sample_m} is not in m_ladder")
        families = [t.family for t in self.test_sets]
        if len(set(families)) != len(families):
            raise ConfigError("test_sets must use distinct families")

    @property
    def n(self) -> int:
        return 3 * self.image_size * self.image_size

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return (3, self.image_size, self.image_size)

    @property
    def sheet_m(self) -> int:
        """m used for sample sheets: ``sample_m`` if set, else the ladder value nearest 0.051 n."""
        if self.sample_m is not None:
            return self.sample_m
        target = 0.051 * self.n
        return min(self.m_ladder, key=lambda m: (abs(m - target), m))

    def resolved_jobs(self) -> int:
        return self.jobs or os.cpu_count() or 1

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "image_size": self.image_size,
            "dataset": dataclasses.asdict(self.dataset),
            "prior": dataclasses.asdict(self.prior),
            "test_sets": [dataclasses.asdict(t) for t in self.test_sets],
            "m_ladder": list(self.m_ladder),
            "models": list(self.models),
            "noise_level": self.noise_level,
            "profile": self.profile,
            "dd_layers": self.dd_layers,
            "seed": self.seed,
            "weights": self.weights,
            "out_dir": self.out_dir,
            "sample_m": self.sample_m,
            "jobs": self.jobs,
        }

    @classmethod
    def from_dict(cls, d: dict, require: tuple[str, ...] = ()) -> "ExperimentConfig":
        """Build from a parsed document; fields named in ``require`` must be present."""
        if not isinstance(d, dict):
            raise ConfigError("config document must be a JSON object")
        for name in ("schema_version",) + tuple(require):
            if name not in d:
                raise ConfigError(f"config is missing required field {name!r}")
        known = {f.name for f in dataclasses.fields(cls)} - {"extra"}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"config has unknown fields {unknown}")
        kw = {}
        try:
            for k, v in d.items():
                if k == "dataset":
                    kw[k] = _section(ImageSet, v, k)
                elif k == "prior":
                    kw[k] = _section(PriorConfig, v, k)
                elif k == "test_sets":
                    kw[k] = tuple(_section(ImageSet, t, f"test_sets[{i}]") for i, t in enumerate(v))
                elif k in ("m_ladder", "models"):
                    kw[k] = tuple(v)
                else:
                    kw[k] = v
            return cls(**kw)
        except (TypeError, ValueError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"invalid config: {e}") from e


def _section(kind, value, name):
    if not isinstance(value, dict):
        raise ConfigError(f"config field {name!r} must be an object")
    allowed = {f.name for f in dataclasses.fields(kind)}
    unknown = sorted(set(value) - allowed)
    if unknown:
        raise ConfigError(f"config field {name!r} has unknown keys {unknown}")
    return kind(**value)


def load_config(path, require: tuple[str, ...] = (), env: dict | None = None) -> ExperimentConfig:
    """Read a config file; ``HP_SEED`` in the environment overrides the master seed."""
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError as e:
        raise ConfigError(f"config file {path} does not exist") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
    cfg = ExperimentConfig.from_dict(doc, require)
    return apply_env(cfg, env)


def apply_env(cfg: ExperimentConfig, env: dict | None = None) -> ExperimentConfig:
    env = os.environ if env is None else env
    if env.get(SEED_ENV, "") != "":
        try:
            return cfg.replace(seed=int(env[SEED_ENV]))
        except ValueError as e:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env[SEED_ENV]!r}") from e
    return cfg


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
