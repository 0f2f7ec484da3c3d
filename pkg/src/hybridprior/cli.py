"""Command line: ``hybridprior {train-prior, invert, sweep, report}``.

Exit codes: 0 success, 1 one or more sweep cells failed, 2 configuration or
input error (reported before any optimisation starts).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .config import MODELS, ExperimentConfig, ImageSet, apply_env, load_config
from .datasets import FAMILIES, ImageDistribution, sample_image, sample_images, save_png
from .deep_decoder import DeepDecoderConfig, dd_init
from .errors import ConfigError, InversionError, WeightFileError
from .generator import load_weights, sample_latent, save_weights, train_glo
from .hybrid import hybrid_init, hybrid_param_count
from .inversion import PROFILES, InversionConfig, invert_dd, invert_gan_as_dip, invert_generator, invert_hybrid
from .measurement import GaussianOperator, IdentityOperator, SuperresOperator, operator_from_dict, synthesize_task
from .metrics import RESULTS_FIELDS, RunRecord, aggregate, psnr, read_results, write_results
from .sweep import decoder_width, render_reports, run_sweep

log = logging.getLogger("hybridprior")

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from e


def _str_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _base_config(args, require=()) -> ExperimentConfig:
    return load_config(args.config, require) if args.config else apply_env(ExperimentConfig())


# ---- train-prior -------------------------------------------------------------

def cmd_train_prior(args) -> int:
    cfg = _base_config(args, require=("dataset",))
    prior = cfg.prior
    changes = {k: v for k, v in (("epochs", args.epochs), ("seed", args.seed),
                                  ("latent_noise", args.latent_noise)) if v is not None}
    if changes:
        prior = dataclasses.replace(prior, **changes)
    dataset = cfg.dataset
    if args.images is not None:
        dataset = ImageSet(dataset.family, args.images, dataset.start, dataset.seed)
    out = Path(args.out or cfg.weights)
    if not out.parent.is_dir():
        raise ConfigError(f"output directory {out.parent} does not exist")

    gen_cfg = prior.generator_config(cfg.image_size)
    images = sample_images(dataset.distribution(cfg.image_size), dataset.count, dataset.start)
    log.info("training prior on %d %s images for %d epochs", dataset.count, dataset.family, prior.epochs)
    rep = train_glo(images, gen_cfg, prior.epochs, prior.seed, batch_size=prior.batch_size, lr=prior.lr,
                    lr_latent=prior.lr_latent, latent_noise=prior.latent_noise,
                    on_epoch=lambda e, l: log.debug("epoch %d loss %.4f", e, l))
    rep.provenance.update({"dataset": {"family": dataset.family, "count": dataset.count,
                                       "start": dataset.start, "seed": dataset.seed}})
    save_weights(rep, out)
    log_path = out.with_suffix(".training.csv")
    with open(log_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for e, loss in enumerate(rep.training_log):
            w.writerow([e, repr(loss)])
    print(f"weights\t{out}\nlog\t{log_path}\nfinal_loss\t{rep.training_log[-1]:.6f}")
    return EXIT_OK


# ---- invert --------------------------------------------------------------------

def _invert_task(args, size: int):
    """Build (or replay) the task; every check happens here, before optimisation."""
    shape = (3, size, size)
    if args.task:
        doc = json.loads(Path(args.task).read_text())
        op = operator_from_dict(doc["operator"])
        src = doc["sources"][0]
        dist = ImageDistribution(src["family"], int(src["size"]), int(src["seed"]))
        image = sample_image(dist, int(src["index"]))
        seeds = doc["noise_seeds"] or [0]
        return synthesize_task(op, image, float(doc["noise_level"]), seeds[0],
                               doc.get("image_ids", ()), doc["sources"])
    n = 3 * size * size
    if args.operator == "gaussian":
        if args.m is None:
            raise ConfigError("--m is required for the gaussian operator")
        if not 1 <= args.m <= n:
            raise ConfigError(f"--m must satisfy 1 <= m <= n = {n}, got {args.m}")
        op = GaussianOperator(args.m, shape, args.seed)
    elif args.operator == "superres":
        op = SuperresOperator(args.factor, shape)
    else:
        op = IdentityOperator(shape)
    dist = ImageDistribution(args.family, size, args.data_seed)
    src = {"family": args.family, "seed": args.data_seed, "index": args.index, "size": size}
    return synthesize_task(op, sample_image(dist, args.index), args.noise, args.seed + 1,
                           (f"{args.family}/{args.index}",), [src])


def cmd_invert(args) -> int:
    if args.m is not None and args.m < 1:
        raise ConfigError(f"--m must be >= 1, got {args.m}")
    needs_gen = args.model != "dd"
    gen = None
    size = args.image_size
    if needs_gen:
        if not args.weights:
            raise ConfigError(f"model {args.model!r} needs --weights")
        gen = load_weights(args.weights)
        if gen.config.output_size != (size, size):
            raise ConfigError(f"weights render {gen.config.output_size} images, task uses {size}x{size}")
    task = _invert_task(args, size)
    if task.operator.image_shape != (3, size, size):
        raise ConfigError(f"task operator expects {task.operator.image_shape}, images are {(3, size, size)}")

    k = args.k or decoder_width(task.operator.m, args.dd_layers)
    dd_cfg = DeepDecoderConfig(channels=k, layers=args.dd_layers, output_size=(size, size))
    decoder = dd_init(dd_cfg, seeds=[args.seed + 2])
    z0 = sample_latent(gen.latent_spec, args.seed + 3)[None] if gen else None
    inv = InversionConfig.profile(args.profile, seed=args.seed)
    batched = synthesize_task(task.operator, task.ground_truth[None], task.noise_level, task.noise_seeds,
                              task.image_ids, task.sources)

    alpha = beta = float("nan")
    if args.model == "dd":
        res, count = invert_dd(batched, decoder, inv), decoder.param_count()
    elif args.model == "gan":
        res, count = invert_generator(batched, gen, z0, inv), gen.latent_spec.dim
    elif args.model == "hybrid":
        rep = hybrid_init(gen, decoder, z0)
        res, count = invert_hybrid(batched, rep, inv), hybrid_param_count(rep)
        alpha, beta = float(res.rep.alpha[0]), float(res.rep.beta[0])
    else:
        res, count = invert_gan_as_dip(batched, gen, z0, inv), gen.latent_spec.dim + gen.param_count()

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_png(res.image[0], out / "reconstruction.png")
    save_png(task.ground_truth, out / "ground_truth.png")
    res.trajectory.write_csv(out / "trajectory.csv", index=0)
    (out / "task.json").write_text(json.dumps(task.to_dict(), indent=2) + "\n")
    seconds = res.trajectory.seconds[-1] if len(res.trajectory) else 0.0
    record = RunRecord(args.model, task.operator.m, task.operator.n, args.seed, task.image_ids[0],
                       psnr(task.ground_truth, res.image[0]), float(res.final_loss[0]),
                       alpha, beta, int(count), seconds)
    write_results([record], out / "record.csv")
    row = record.to_row()
    print("\t".join(RESULTS_FIELDS))
    print("\t".join(str(row[f]) for f in RESULTS_FIELDS))
    return EXIT_OK


# ---- sweep / report ------------------------------------------------------------

def cmd_sweep(args) -> int:
    cfg = _base_config(args)
    changes = {}
    for flag, key in (("m_ladder", "m_ladder"), ("models", "models")):
        if getattr(args, flag) is not None:
            changes[key] = tuple(getattr(args, flag))
    for key in ("profile", "out_dir", "seed", "weights", "jobs", "sample_m"):
        if getattr(args, key) is not None:
            changes[key] = getattr(args, key)
    if args.images is not None:
        changes["test_sets"] = tuple(ImageSet(t.family, args.images, t.start, t.seed) for t in cfg.test_sets)
    if args.families is not None:
        base = {t.family: t for t in changes.get("test_sets", cfg.test_sets)}
        count = args.images or 12
        changes["test_sets"] = tuple(base.get(f, ImageSet(f, count, 0)) for f in args.families)
    cfg = ExperimentConfig.from_dict({**cfg.to_dict(), **_plain(changes)})
    outcome = run_sweep(cfg, resume=args.resume)
    print(f"records\t{len(outcome.records)}")
    print(f"cells_run\t{len(outcome.ran)}")
    print(f"cells_skipped\t{len(outcome.skipped)}")
    print(f"cells_failed\t{len(outcome.failures)}")
    for f in outcome.failures:
        print(f"failed\t{f}")
    print(f"results\t{Path(cfg.out_dir) / 'results.csv'}")
    return EXIT_OK if outcome.ok else EXIT_FAILED


def _plain(changes: dict) -> dict:
    out = dict(changes)
    if "test_sets" in out:
        out["test_sets"] = [dataclasses.asdict(t) for t in out["test_sets"]]
    for key in ("m_ladder", "models"):
        if key in out:
            out[key] = list(out[key])
    return out


def cmd_report(args) -> int:
    out = Path(args.out_dir)
    path = out / "results.csv"
    if not path.is_file():
        raise ConfigError(f"{path} does not exist (run sweep first)")
    try:
        records = read_results(path)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    written = render_reports(None, records, out_dir=out)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["image_set", "model", "m", "mean_psnr_db", "std_psnr_db", "count", "exact"])
    for a in aggregate(records, group=lambda r: r.image_set):
        w.writerow([a.group, a.model, a.m, f"{a.mean:.4f}", f"{a.std:.4f}", a.count, a.exact])
    for p in written:
        print(f"# wrote {p}", file=sys.stderr)
    return EXIT_OK


# ---- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hybridprior", description="Hybrid generative + Deep Decoder image priors.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    p.add_argument("-q", "--quiet", action="store_true", help="only log errors")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train-prior", help="fit the generator by latent optimisation")
    t.add_argument("--config", help="experiment JSON (needs a 'dataset' section)")
    t.add_argument("--out", help="weight file to write (default: config 'weights')")
    t.add_argument("--epochs", type=int)
    t.add_argument("--images", type=int, help="number of training images")
    t.add_argument("--seed", type=int, help="training seed")
    t.add_argument("--latent-noise", type=float)
    t.set_defaults(func=cmd_train_prior)

    i = sub.add_parser("invert", help="reconstruct one image from measurements")
    i.add_argument("--model", choices=MODELS, required=True)
    i.add_argument("--weights", help="generator weight file (all models but dd)")
    i.add_argument("--task", help="replay a task.json written by an earlier invert")
    i.add_argument("--operator", choices=("gaussian", "superres", "identity"), default="gaussian")
    i.add_argument("--m", type=int, help="measurement count (gaussian operator)")
    i.add_argument("--factor", type=int, default=2, help="superresolution factor")
    i.add_argument("--family", choices=FAMILIES, default="blobs")
    i.add_argument("--index", type=int, default=1000, help="image index within the family")
    i.add_argument("--data-seed", type=int, default=0)
    i.add_argument("--image-size", type=int, default=64)
    i.add_argument("--noise", type=float, default=0.1)
    i.add_argument("--profile", choices=sorted(PROFILES), default="ci")
    i.add_argument("--dd-layers", type=int, default=4)
    i.add_argument("--k", type=int, help="decoder width (default: chosen from m)")
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("--out-dir", default="runs/invert")
    i.set_defaults(func=cmd_invert)

    s = sub.add_parser("sweep", help="run the model x m x image cross product")
    s.add_argument("--config", help="experiment JSON; flags override its fields")
    s.add_argument("--m-ladder", type=_int_list)
    s.add_argument("--models", type=_str_list)
    s.add_argument("--families", type=_str_list, help="test image families")
    s.add_argument("--images", type=int, help="test images per family")
    s.add_argument("--profile", choices=sorted(PROFILES))
    s.add_argument("--out-dir")
    s.add_argument("--seed", type=int)
    s.add_argument("--weights")
    s.add_argument("--jobs", type=int)
    s.add_argument("--sample-m", type=int)
    s.add_argument("--resume", action="store_true", help="only run cells without a result file")
    s.set_defaults(func=cmd_sweep)

    r = sub.add_parser("report", help="re-render tables and plots from results.csv")
    r.add_argument("--out-dir", required=True, help="sweep directory holding results.csv")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.ERROR if args.quiet else (logging.INFO if args.verbose == 1 else
                                              logging.DEBUG if args.verbose > 1 else logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, WeightFileError, FileNotFoundError, json.JSONDecodeError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except InversionError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILED
