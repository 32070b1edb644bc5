"""Seeded finite-difference cases: one builder per primitive plus the composed networks.

Each builder maps a seed to ``(fn, inputs, max_coords)`` for :func:`autodiff.grad_check`.
"""
from __future__ import annotations

import numpy as np

from gan_introspect import autodiff as ad
from gan_introspect.autodiff import Tensor
from gan_introspect.networks import GeneratorConfig, build_discriminator, build_generator

N_CONFIGS = 20
TOLERANCE = 1e-4


def _t(rng, *shape, away_from_zero=False):
    a = rng.standard_normal(shape)
    if away_from_zero:
        a = np.sign(a) * (0.2 + np.abs(a))
    return Tensor(a, requires_grad=True)


def _dims(rng, lo=1, hi=4, n=2):
    return tuple(int(v) for v in rng.integers(lo, hi + 1, size=n))


def case_add(rng):
    a, b = _t(rng, 3, 4), _t(rng, 1, 4)
    return ad.add, [a, b], None


def case_sub(rng):
    a, b = _t(rng, 2, 3, 1), _t(rng, 3, 5)
    return ad.sub, [a, b], None


def case_mul(rng):
    a, b = _t(rng, *_dims(rng)), _t(rng, 1)
    return ad.mul, [a, b], None


def case_square(rng):
    return ad.square, [_t(rng, *_dims(rng, n=3))], None


def case_abs(rng):
    return ad.tabs, [_t(rng, *_dims(rng, n=3), away_from_zero=True)], None


def case_sigmoid(rng):
    x = Tensor(3.0 * rng.standard_normal(_dims(rng, n=3)), requires_grad=True)
    return ad.sigmoid, [x], None


def case_softplus(rng):
    x = Tensor(3.0 * rng.standard_normal(_dims(rng, n=3)), requires_grad=True)
    return ad.softplus, [x], None


def case_sum(rng):
    axis = int(rng.integers(0, 3))
    return (lambda x: ad.tsum(x, axis)), [_t(rng, 2, 3, 4)], None


def case_mean(rng):
    return ad.mean, [_t(rng, *_dims(rng, n=3))], None


def case_reshape(rng):
    return (lambda x: ad.reshape(x, (6, -1))), [_t(rng, 2, 3, 4)], None


def case_rows(rng):
    n = int(rng.integers(2, 6))
    start = int(rng.integers(0, n - 1))
    return (lambda x: ad.rows(x, start, n)), [_t(rng, n, 3)], None


def case_take_rows(rng):
    idx = rng.integers(0, 4, size=6)
    return (lambda t: ad.take_rows(t, idx)), [_t(rng, 4, 3)], None


def _conv_geometry(rng):
    kh, kw = _dims(rng, 1, 4)
    sh, sw = _dims(rng, 1, 3)
    ph, pw = int(rng.integers(0, kh)), int(rng.integers(0, kw))
    c, o = _dims(rng, 1, 4)
    return kh, kw, sh, sw, ph, pw, c, o


def case_conv2d(rng):
    kh, kw, sh, sw, ph, pw, c, o = _conv_geometry(rng)
    x = _t(rng, 2, c, int(rng.integers(kh, kh + 5)), int(rng.integers(kw, kw + 5)))
    w, b = _t(rng, o, c, kh, kw), _t(rng, o)
    return (lambda x, w, b: ad.conv2d(x, w, b, (sh, sw), (ph, pw))), [x, w, b], None


def case_conv_transpose2d(rng):
    kh, kw, sh, sw, ph, pw, c, o = _conv_geometry(rng)
    ph, pw = min(ph, (kh - 1) // 2), min(pw, (kw - 1) // 2)
    x = _t(rng, 2, c, *_dims(rng, 2, 4))
    w, b = _t(rng, c, o, kh, kw), _t(rng, o)
    return (lambda x, w, b: ad.conv_transpose2d(x, w, b, (sh, sw), (ph, pw))), [x, w, b], None


def case_conv1d(rng):
    k = int(rng.integers(1, 6))
    p = int(rng.integers(0, k))
    x, w, b = _t(rng, 2, 3, int(rng.integers(k, k + 6))), _t(rng, 4, 3, k), _t(rng, 4)
    return (lambda x, w, b: ad.conv1d(x, w, b, 1, p)), [x, w, b], None


def case_glu(rng):
    return ad.glu, [_t(rng, 2, 2 * int(rng.integers(1, 4)), 3, 2)], None


def case_instance_norm(rng):
    c = int(rng.integers(1, 4))
    shape = (2, c, 3, 4) if rng.random() < 0.5 else (2, c, 5)
    x = Tensor(rng.standard_normal(shape) * rng.uniform(0.5, 3.0) + rng.normal(), requires_grad=True)
    g, b = _t(rng, c), _t(rng, c)
    return ad.instance_norm, [x, g, b], None


def case_cond_instance_norm(rng):
    n, c = 3, int(rng.integers(1, 4))
    codes = rng.integers(0, n, size=2)
    x, g, b = _t(rng, 2, c, 6), _t(rng, n, c), _t(rng, n, c)
    return (lambda x, g, b: ad.cond_instance_norm(x, codes, g, b)), [x, g, b], None


def case_global_sum_pool(rng):
    return ad.global_sum_pool, [_t(rng, 2, 3, *_dims(rng))], None


def case_fully_connected(rng):
    f, o = _dims(rng, 1, 5)
    return ad.fully_connected, [_t(rng, 3, f), _t(rng, o, f), _t(rng, o)], None


def case_reshape_2d_to_1d(rng):
    return ad.reshape_2d_to_1d, [_t(rng, 2, 3, 2, 4)], None


def case_reshape_1d_to_2d(rng):
    return (lambda x: ad.reshape_1d_to_2d(x, 2)), [_t(rng, 2, 6, 3)], None


def _small_config(rng):
    return GeneratorConfig(q_features=8, base_channels=int(rng.integers(1, 3)), repeat_blocks=int(rng.integers(1, 4)),
                           n_domains=3, seed=int(rng.integers(0, 1 << 16)))


def case_generator(rng):
    cfg = _small_config(rng)
    gen = build_generator(cfg)
    for _, t in gen.named_parameters():
        # larger-than-init weights keep activations away from the flat regions of the norms
        t.data = t.data * 10.0
    # long enough that every norm sees several positions per channel
    x = Tensor(rng.standard_normal((2, 1, 8, 32)), requires_grad=True)
    codes = rng.integers(0, 3, size=2)
    params = [t for _, t in gen.named_parameters()]
    return (lambda x, *ps: gen(x, codes)[0]), [x, *params], 4


def case_discriminator(rng):
    cfg = _small_config(rng)
    disc = build_discriminator(cfg)
    for _, t in disc.named_parameters():
        t.data = t.data * 10.0
    x = Tensor(rng.standard_normal((2, 1, 8, 8)), requires_grad=True)
    src, tgt = rng.integers(0, 3, size=2), rng.integers(0, 3, size=2)
    params = [t for _, t in disc.named_parameters()]
    return (lambda x, *ps: disc(x, src, tgt)), [x, *params], 6


PRIMITIVES = {name[5:]: fn for name, fn in globals().items() if name.startswith("case_")
              and name not in ("case_generator", "case_discriminator")}
COMPOSED = {"generator": case_generator, "discriminator": case_discriminator}
ALL_CASES = {**PRIMITIVES, **COMPOSED}
# The scaled-up networks are strongly curved, so truncation error dominates at the
# default step; the primitives are roundoff-limited and prefer the larger step.
STEPS = {"generator": 2e-6, "discriminator": 2e-6}


def run_case(name: str, seed: int) -> float:
    rng = np.random.default_rng([seed, sum(map(ord, name))])
    fn, inputs, max_coords = ALL_CASES[name](rng)
    return ad.grad_check(fn, inputs, step=STEPS.get(name, 1e-5), seed=seed, max_coords=max_coords)
