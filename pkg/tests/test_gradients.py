"""Reverse-mode gradients against central finite differences (h = 1e-5, 20 seeds per case)."""

import numpy as np
import pytest

from _oracles import central_fd, rel_error, tape_grads
from hybridprior.autodiff import (Tensor, apply_linear, channel_norm, conv1x1, lincomb, matvec, relu,
                                  reshape, sigmoid, sub, sum_squares, upsample_bilinear_2x)
from hybridprior import deep_decoder as dd_module
from hybridprior.deep_decoder import DeepDecoderConfig, dd_forward, dd_init
from hybridprior.generator import GeneratorConfig, LatentSpec, generator_forward, generator_init
from hybridprior.hybrid import hybrid_forward, hybrid_init

SEEDS = range(20)
TOL = 1e-4


def probe(out, target):
    """Quadratic read-out so every output entry influences the loss."""
    return sum_squares(sub(out, Tensor(target)))


def check(build, arrays, target_shape, seed):
    rng = np.random.default_rng(1000 + seed)
    target = rng.normal(size=target_shape)

    def loss(*ts):
        return probe(build(*ts), target)

    ad = tape_grads(loss, arrays)
    fd = central_fd(lambda *a: loss(*[Tensor(x) for x in a]).item(), arrays)
    err = rel_error(ad, fd)
    assert err < TOL, f"relative gradient error {err:.2e}"
    return err


def away_from_zero(rng, shape, margin=1e-3):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, margin * np.sign(x + 1e-12) * 10, x)


@pytest.mark.parametrize("seed", SEEDS)
def test_conv1x1(seed):
    rng = np.random.default_rng(seed)
    check(conv1x1, [rng.normal(size=(3, 4, 4)), rng.normal(size=(5, 3))], (5, 4, 4), seed)


@pytest.mark.parametrize("seed", SEEDS)
def test_relu(seed):
    rng = np.random.default_rng(seed)
    check(relu, [away_from_zero(rng, (3, 5))], (3, 5), seed)


@pytest.mark.parametrize("seed", SEEDS)
def test_sigmoid(seed):
    rng = np.random.default_rng(seed)
    check(sigmoid, [rng.normal(size=(4, 5)) * 2], (4, 5), seed)


@pytest.mark.parametrize("seed", SEEDS)
def test_upsample(seed):
    rng = np.random.default_rng(seed)
    check(upsample_bilinear_2x, [rng.normal(size=(2, 3, 5))], (2, 6, 10), seed)


@pytest.mark.parametrize("seed", SEEDS)
def test_channel_norm(seed):
    rng = np.random.default_rng(seed)
    arrays = [rng.normal(size=(3, 4, 4)), rng.normal(size=3), rng.normal(size=3)]
    check(lambda x, s, b: channel_norm(x, s, b, 1e-6), arrays, (3, 4, 4), seed)


@pytest.mark.parametrize("seed", SEEDS)
def test_lincomb_with_tensor_coefficients(seed):
    rng = np.random.default_rng(seed)
    arrays = [rng.normal(size=()), rng.normal(size=(2, 3)), rng.normal(size=()), rng.normal(size=(2, 3))]
    check(lincomb, arrays, (2, 3), seed)


@pytest.mark.parametrize("seed", SEEDS)
def test_matvec(seed):
    rng = np.random.default_rng(seed)
    check(matvec, [rng.normal(size=(7, 12)), rng.normal(size=12)], (7,), seed)


@pytest.mark.parametrize("seed", SEEDS)
def test_reshape_and_apply_linear(seed):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(4, 6))

    def build(x):
        flat = reshape(x, (6,))
        return apply_linear(flat, lambda v: v @ M.T, lambda u: u @ M)

    check(build, [rng.normal(size=(2, 3))], (4,), seed)


# ---- composed models ------------------------------------------------------------
#
# Finite differences are only meaningful away from ReLU kinks, so composed
# cases are drawn from a seed stream and a draw is skipped when any ReLU
# input lies within KINK_MARGIN of zero; every test still checks 20 draws.

KINK_MARGIN = 1e-3


def kink_distance(fn):
    """Smallest |ReLU input| seen while evaluating ``fn()``."""
    seen = [np.inf]
    original = dd_module.relu

    def spy(x):
        seen[0] = min(seen[0], float(np.abs(x.data).min()))
        return original(x)

    dd_module.relu = spy
    try:
        fn()
    finally:
        dd_module.relu = original
    return seen[0]


def smooth_cases(make, count=20):
    """First ``count`` seeds whose case (from ``make(seed) -> (build, arrays)``) avoids ReLU kinks."""
    out, seed = [], 0
    while len(out) < count:
        build, arrays = make(seed)
        if kink_distance(lambda: build(*[Tensor(a) for a in arrays])) > KINK_MARGIN:
            out.append(seed)
        seed += 1
    return out


# 4x4 seed tensors: with 2x2 seeds a ReLU can silence almost a whole channel,
# which puts finite differences on a kink of the normalisation.
def _dd(seed):
    return dd_init(DeepDecoderConfig(channels=4, layers=2, output_size=(16, 16), seed=seed))


def _gen(seed):
    cfg = GeneratorConfig(LatentSpec(dim=5), channels=4, layers=2, output_size=(16, 16))
    rep = generator_init(cfg, seed)
    return rep.replace(frozen=True)


def dd_case(seed):
    rep = _dd(seed)
    names = list(rep.theta)
    return (lambda *ts: dd_forward(rep, dict(zip(names, ts)))), [rep.theta[k].copy() for k in names]


def generator_case(seed):
    rep = _gen(seed).replace(frozen=False)
    names = list(rep.phi)
    z = np.random.default_rng(seed).uniform(-1, 1, 5)

    def build(zt, *ts):
        return generator_forward(rep, zt, dict(zip(names, ts)))

    return build, [z] + [rep.phi[k].copy() for k in names]


def hybrid_case(seed):
    rng = np.random.default_rng(seed)
    rep = hybrid_init(_gen(seed), _dd(seed + 100), rng.uniform(-1, 1, 5), alpha=rng.normal(), beta=rng.normal())
    leaves = rep.leaves()
    names = list(leaves)
    return (lambda *ts: hybrid_forward(rep, dict(zip(names, ts)))), [np.array(leaves[k], copy=True) for k in names]


@pytest.mark.parametrize("make", [dd_case, generator_case, hybrid_case], ids=["decoder", "generator", "hybrid"])
def test_composed_forward(make):
    seeds = smooth_cases(make)
    assert len(seeds) == 20
    for seed in seeds:
        build, arrays = make(seed)
        check(build, arrays, (3, 16, 16), seed)


@pytest.mark.parametrize("seed", range(5))
def test_batched_decoder_matches_per_image(seed):
    cfg = DeepDecoderConfig(channels=4, layers=2, output_size=(8, 8))
    batch = dd_init(cfg, seeds=[seed, seed + 1])
    for i in range(2):
        single = dd_init(DeepDecoderConfig(channels=4, layers=2, output_size=(8, 8), seed=seed + i))
        np.testing.assert_allclose(dd_forward(batch).data[i], dd_forward(single).data, rtol=0, atol=1e-14)
