"""Measurement sweeps: every (model, m, image) cell of an experiment config.

Work is split into units of one (m, test set) pair.  A unit draws the
measurement matrix once and runs every pending model on the whole image set
as one batched inversion, so all models see identical tasks.  Finished cells
are written to ``cells/`` immediately, which is what ``resume`` keys on; the
merged ``results.csv``, plots and sample sheets are rebuilt from those files
at the end of every sweep.
"""

from __future__ import annotations

import dataclasses
import logging
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .config import ExperimentConfig, ImageSet, derive_seed, save_config
from .datasets import IN_DISTRIBUTION, load_png, sample_images, sample_sheet, save_png
from .deep_decoder import WIDTH_LADDER, DeepDecoderConfig, NoFeasibleWidth, dd_choose_k, dd_init
from .errors import ConfigError
from .generator import GeneratorRep, load_weights, sample_latent
from .hybrid import hybrid_init, hybrid_param_count
from .inversion import InversionConfig, invert_dd, invert_gan_as_dip, invert_generator, invert_hybrid
from .measurement import GaussianOperator, synthesize_task
from .metrics import RunRecord, aggregate, aggregates_to_csv, psnr, read_results, write_results
from .plotting import coefficient_plot, plot_psnr_curves

log = logging.getLogger(__name__)

GENERATOR_MODELS = ("gan", "hybrid", "gan-as-dip")


@dataclass
class SweepOutcome:
    records: list[RunRecord]
    failures: list[str] = field(default_factory=list)
    ran: list[str] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def cell_name(model: str, m: int, family: str) -> str:
    return f"{model}__m{m}__{family}"


def decoder_width(m: int, layers: int) -> int:
    """Ladder width for ``m``; falls back to the narrowest width when none keeps |theta| < m."""
    try:
        return dd_choose_k(m, layers)
    except NoFeasibleWidth:
        log.warning("m=%d admits no underparameterised decoder width; using k=%d", m, min(WIDTH_LADDER))
        return min(WIDTH_LADDER)


def build_task(cfg: ExperimentConfig, m: int, tset: ImageSet):
    images = np.stack(sample_images(tset.distribution(cfg.image_size), tset.count, tset.start))
    op = GaussianOperator(m, cfg.image_shape, derive_seed(cfg.seed, "A", m))
    idx = range(tset.start, tset.start + tset.count)
    noise = [derive_seed(cfg.seed, "noise", m, tset.family, i) for i in idx]
    sources = [{"family": tset.family, "seed": tset.seed, "index": i, "size": cfg.image_size} for i in idx]
    return synthesize_task(op, images, cfg.noise_level, noise, tset.image_ids(), sources)


def load_prior(cfg: ExperimentConfig) -> GeneratorRep:
    if not Path(cfg.weights).is_file():
        raise ConfigError(f"weights file {cfg.weights} does not exist (run train-prior first)")
    return load_weights(cfg.weights, expected=cfg.prior.generator_config(cfg.image_size))


def run_unit(cfg: ExperimentConfig, m: int, tset: ImageSet, models: list[str],
             generator: GeneratorRep | None = None) -> dict[str, list[RunRecord] | str]:
    """Run ``models`` on one (m, test set) pair; failed models map to an error message."""
    out_dir = Path(cfg.out_dir)
    if generator is None and any(mo in GENERATOR_MODELS for mo in models):
        generator = load_prior(cfg)
    task = build_task(cfg, m, tset)
    idx = list(range(tset.start, tset.start + tset.count))
    k = decoder_width(m, cfg.dd_layers)
    dd_cfg = DeepDecoderConfig(channels=k, layers=cfg.dd_layers, output_size=(cfg.image_size,) * 2)
    decoder = dd_init(dd_cfg, seeds=[derive_seed(cfg.seed, "dd", m, tset.family, i) for i in idx])
    z0 = None
    if generator is not None:
        z0 = np.stack([sample_latent(generator.latent_spec, derive_seed(cfg.seed, "z", m, tset.family, i))
                       for i in idx])
    inv = InversionConfig.profile(cfg.profile, seed=cfg.seed)
    sheet = m == cfg.sheet_m

    results: dict[str, list[RunRecord] | str] = {}
    for model in models:
        t0 = time.perf_counter()
        try:
            if model == "dd":
                res = invert_dd(task, decoder, inv)
                count, alpha, beta = decoder.param_count(), None, None
            elif model == "gan":
                res = invert_generator(task, generator, z0, inv)
                count, alpha, beta = generator.latent_spec.dim, None, None
            elif model == "hybrid":
                rep = hybrid_init(generator, decoder, z0)
                res = invert_hybrid(task, rep, inv)
                count, alpha, beta = hybrid_param_count(rep), res.rep.alpha, res.rep.beta
            elif model == "gan-as-dip":
                res = invert_gan_as_dip(task, generator, z0, inv)
                count, alpha, beta = generator.latent_spec.dim + generator.param_count(), None, None
            else:
                raise ConfigError(f"unknown model {model!r}")
        except Exception as e:  # noqa: BLE001 - a failed cell must not stop the sweep
            log.error("cell %s failed: %s", cell_name(model, m, tset.family), e)
            log.debug("%s", traceback.format_exc())
            results[model] = f"{type(e).__name__}: {e}"
            continue
        seconds = (time.perf_counter() - t0) / tset.count

        traj_dir = out_dir / "trajectories" / model / f"m{m}"
        traj_dir.mkdir(parents=True, exist_ok=True)
        records = []
        for b, (i, image_id) in enumerate(zip(idx, task.image_ids)):
            res.trajectory.write_csv(traj_dir / f"{tset.family}_{i}.csv", index=b)
            if sheet:
                sample_dir = out_dir / "samples" / model
                sample_dir.mkdir(parents=True, exist_ok=True)
                save_png(res.image[b], sample_dir / f"{tset.family}_{i}.png")
            records.append(RunRecord(
                model=model, m=m, n=cfg.n, seed=cfg.seed, image_id=image_id,
                psnr_db=psnr(task.ground_truth[b], res.image[b]), final_loss=float(res.final_loss[b]),
                alpha=float(alpha[b]) if alpha is not None else float("nan"),
                beta=float(beta[b]) if beta is not None else float("nan"),
                param_count=int(count), seconds=seconds))
        results[model] = records
        log.info("m=%d %s %s: mean PSNR %.2f dB", m, tset.family, model,
                 float(np.mean([r.psnr_db for r in records])))

    if sheet:
        truth_dir = out_dir / "samples" / "truth"
        truth_dir.mkdir(parents=True, exist_ok=True)
        for b, i in enumerate(idx):
            save_png(task.ground_truth[b], truth_dir / f"{tset.family}_{i}.png")
    return results


def _worker(cfg_dict: dict, m: int, tset: dict, models: list[str]):
    with threadpool_limits(limits=1):
        cfg = ExperimentConfig.from_dict(cfg_dict)
        return m, tset["family"], run_unit(cfg, m, ImageSet(**tset), models)


def run_sweep(cfg: ExperimentConfig, resume: bool = False) -> SweepOutcome:
    """Run every missing cell (all cells unless ``resume``) and rebuild the reports."""
    out_dir = Path(cfg.out_dir)
    (out_dir / "cells").mkdir(parents=True, exist_ok=True)
    save_config(cfg, out_dir / "config.json")
    generator = load_prior(cfg) if any(mo in GENERATOR_MODELS for mo in cfg.models) else None

    outcome = SweepOutcome(records=[])
    units = []
    for m in cfg.m_ladder:
        for tset in cfg.test_sets:
            pending = []
            for model in cfg.models:
                name = cell_name(model, m, tset.family)
                if resume and (out_dir / "cells" / f"{name}.csv").is_file():
                    outcome.skipped.append(name)
                else:
                    pending.append(model)
            if pending:
                units.append((m, tset, pending))

    def collect(m, family, results):
        for model, res in results.items():
            name = cell_name(model, m, family)
            if isinstance(res, str):
                outcome.failures.append(f"{name}: {res}")
            else:
                write_results(res, out_dir / "cells" / f"{name}.csv")
                outcome.ran.append(name)

    jobs = min(cfg.resolved_jobs(), max(len(units), 1))
    if jobs <= 1:
        with threadpool_limits(limits=1):
            for m, tset, models in units:
                collect(m, tset.family, run_unit(cfg, m, tset, models, generator))
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_worker, cfg.to_dict(), m, dataclasses.asdict(t), models)
                       for m, t, models in units]
            for fut in futures:
                collect(*fut.result())

    outcome.records = merge_cells(cfg)
    render_reports(cfg, outcome.records)
    if outcome.failures:
        (out_dir / "failures.txt").write_text("\n".join(outcome.failures) + "\n")
    return outcome


def merge_cells(cfg: ExperimentConfig) -> list[RunRecord]:
    """Gather the cell files of this config into ``results.csv``."""
    out_dir = Path(cfg.out_dir)
    records = []
    for m in cfg.m_ladder:
        for tset in cfg.test_sets:
            for model in cfg.models:
                path = out_dir / "cells" / f"{cell_name(model, m, tset.family)}.csv"
                if path.is_file():
                    records.extend(read_results(path))
    write_results(records, out_dir / "results.csv")
    return records


def render_reports(cfg: ExperimentConfig | None, records: list[RunRecord], out_dir=None) -> list[Path]:
    """Aggregates, PSNR curves per image family, coefficient bars and sample sheets."""
    out_dir = Path(out_dir if out_dir is not None else cfg.out_dir)
    written = []
    if not records:
        return written
    aggs = aggregate(records, group=lambda r: r.image_set)
    aggregates_to_csv(aggs, out_dir / "aggregates.csv")
    written.append(out_dir / "aggregates.csv")
    for family in sorted({a.group for a in aggs}):
        path = out_dir / f"psnr_{family}.svg"
        kind = "in-distribution" if family in IN_DISTRIBUTION else "out-of-distribution"
        plot_psnr_curves([a for a in aggs if a.group == family], path, title=f"{family} ({kind})")
        written.append(path)
    if any(r.model == "hybrid" for r in records):
        path = out_dir / "coefficients.svg"
        coefficient_plot(records, path)
        written.append(path)
    written.extend(render_sheets(out_dir, records))
    return written


def render_sheets(out_dir: Path, records: list[RunRecord]) -> list[Path]:
    """One sheet per image family from the PNGs saved at the sample m (rows: truth then models)."""
    samples = out_dir / "samples"
    if not (samples / "truth").is_dir():
        return []
    models = [mo for mo in ("gan", "dd", "hybrid", "gan-as-dip") if (samples / mo).is_dir()]
    written = []
    families = sorted({r.image_set for r in records})
    for family in families:
        ids = sorted({r.image_id for r in records if r.image_set == family}, key=lambda s: int(s.split("/")[1]))
        files = [f"{family}_{s.split('/')[1]}.png" for s in ids]
        rows, labels = [], []
        for name in ["truth"] + models:
            paths = [samples / name / f for f in files]
            if all(p.is_file() for p in paths):
                rows.append([load_png(p) for p in paths])
                labels.append(name)
        if len(rows) > 1:
            path = out_dir / f"samples_{family}.png"
            sample_sheet(rows, path, row_labels=labels)
            written.append(path)
    return written
