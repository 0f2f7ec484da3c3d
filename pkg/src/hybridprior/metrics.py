"""PSNR, run records, results.csv I/O and aggregation."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields
from typing import Callable, Iterable, Sequence

import numpy as np

RESULTS_FIELDS = ["model", "m", "n", "seed", "image_id", "psnr_db", "final_loss",
                  "alpha", "beta", "param_count", "seconds"]
MODEL_ORDER = ("gan", "dd", "hybrid", "gan-as-dip")
EXACT = math.inf


def psnr(x: np.ndarray, x_hat: np.ndarray, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE) in dB; identical inputs give the ``EXACT`` (+inf) sentinel."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ValueError(f"psnr shapes differ: {x.shape} vs {x_hat.shape}")
    if peak <= 0:
        raise ValueError("peak must be positive")
    mse = float(np.mean((x - x_hat) ** 2))
    if mse == 0.0:
        return EXACT
    return 10.0 * math.log10(peak * peak / mse)


@dataclass(frozen=True)
class RunRecord:
    model: str
    m: int
    n: int
    seed: int
    image_id: str
    psnr_db: float
    final_loss: float
    alpha: float = math.nan
    beta: float = math.nan
    param_count: int = 0
    seconds: float = 0.0

    @property
    def exact(self) -> bool:
        return math.isinf(self.psnr_db)

    @property
    def image_set(self) -> str:
        """Family prefix of ``image_id`` (``"blobs/1000"`` -> ``"blobs"``)."""
        return self.image_id.split("/", 1)[0]

    @property
    def alpha_share(self) -> float:
        denom = abs(self.alpha) + abs(self.beta)
        return self.alpha / denom if denom > 0 else math.nan

    def to_row(self) -> dict:
        row = asdict(self)
        for k in ("psnr_db", "final_loss", "alpha", "beta"):
            row[k] = _fmt(row[k])
        row["seconds"] = f"{self.seconds:.3f}"
        return row

    @classmethod
    def from_row(cls, row: dict) -> "RunRecord":
        return cls(model=row["model"], m=int(row["m"]), n=int(row["n"]), seed=int(row["seed"]),
                   image_id=row["image_id"], psnr_db=_parse(row["psnr_db"]),
                   final_loss=_parse(row["final_loss"]), alpha=_parse(row["alpha"]),
                   beta=_parse(row["beta"]), param_count=int(row["param_count"]),
                   seconds=float(row["seconds"] or 0.0))


def _fmt(v: float) -> str:
    if math.isnan(v):
        return ""
    if math.isinf(v):
        return "inf"
    return repr(float(v))


def _parse(s: str) -> float:
    return math.nan if s in ("", None) else float(s)


def record_sort_key(r: RunRecord):
    rank = MODEL_ORDER.index(r.model) if r.model in MODEL_ORDER else len(MODEL_ORDER)
    return (rank, r.model, r.m, r.image_id, r.seed)


def write_results(records: Iterable[RunRecord], path) -> None:
    rows = sorted(records, key=record_sort_key)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RESULTS_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(r.to_row())


def read_results(path) -> list[RunRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != RESULTS_FIELDS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [RunRecord.from_row(row) for row in reader]


@dataclass(frozen=True)
class Aggregate:
    model: str
    m: int
    mean: float
    std: float
    count: int
    exact: int = 0
    group: str = ""


def _mean_std(values: Sequence[float]) -> tuple[float, float]:
    """Population statistics via exact summation, so input order cannot change the result."""
    if not values:
        return math.nan, math.nan
    mean = math.fsum(values) / len(values)
    var = math.fsum((v - mean) ** 2 for v in values) / len(values)
    return mean, math.sqrt(var)


def aggregate(records: Iterable[RunRecord], value: Callable[[RunRecord], float] = lambda r: r.psnr_db,
              group: Callable[[RunRecord], str] | None = None) -> list[Aggregate]:
    """Mean and population std per (model, m) cell, optionally split further by ``group``.

    Exact (+inf PSNR) records are left out of the statistics and counted in ``exact``.
    """
    cells: dict[tuple, list[RunRecord]] = {}
    for r in records:
        cells.setdefault((group(r) if group else "", r.model, r.m), []).append(r)

    def key(item):
        g, model, m = item[0]
        rank = MODEL_ORDER.index(model) if model in MODEL_ORDER else len(MODEL_ORDER)
        return (g, rank, model, m)

    out = []
    for (g, model, m), rs in sorted(cells.items(), key=key):
        vals = [value(r) for r in rs]
        finite = [v for v in vals if not math.isinf(v)]
        mean, std = _mean_std(finite)
        out.append(Aggregate(model, m, mean, std, len(finite), len(vals) - len(finite), g))
    return out


def aggregates_to_csv(aggs: Sequence[Aggregate], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f.name for f in fields(Aggregate)])
        for a in aggs:
            w.writerow([a.model, a.m, _fmt(a.mean), _fmt(a.std), a.count, a.exact, a.group])
