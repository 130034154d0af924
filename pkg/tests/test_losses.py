import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffmts.errors import ShapeError, ValidationError
from diffmts.losses import KernelSpec, ada_mmd_loss, median_bandwidth, mmd, noise_mse
from gradcheck import max_rel_error


def brute_mmd(n, m, sigmas):
    """Double-loop V-statistic with an equal-weight RBF mixture."""
    n = [np.ravel(a) for a in n]
    m = [np.ravel(a) for a in m]

    def k(a, b):
        d2 = sum((ai - bi) ** 2 for ai, bi in zip(a, b))
        return sum(math.exp(-d2 / (2 * s * s)) for s in sigmas) / len(sigmas)

    def avg(xs, ys):
        return sum(k(a, b) for a in xs for b in ys) / (len(xs) * len(ys))

    return avg(n, n) - 2 * avg(m, n) + avg(m, m)


def test_noise_mse_cases(rng):
    assert noise_mse(np.ones(4), np.ones(4)).item() == 0.0
    assert noise_mse(np.zeros(4), np.ones(4)).item() == 1.0
    a, b = rng.standard_normal((5, 3, 7)), rng.standard_normal((5, 3, 7))
    diffs = (a - b).ravel()
    total = 0.0
    for d in diffs:
        total += d * d
    assert abs(noise_mse(a, b).item() - total / diffs.size) < 1e-12
    with pytest.raises(ShapeError):
        noise_mse(np.zeros(3), np.zeros(4))


def test_mmd_identical_sets_is_zero(rng):
    x = rng.standard_normal((9, 2, 5))
    assert mmd(x, x.copy()).item() == 0.0


def test_mmd_symmetric(rng):
    a, b = rng.standard_normal((6, 4)), rng.standard_normal((8, 4)) + 0.5
    assert mmd(a, b).item() == pytest.approx(mmd(b, a).item(), abs=1e-14)


def test_mmd_singletons_closed_form():
    spec = KernelSpec(scales=(1.0,), bandwidth=1.0)
    assert mmd(np.array([[0.0]]), np.array([[1.0]]), spec).item() == pytest.approx(2 - 2 * math.exp(-0.5), abs=1e-15)


def test_mmd_empty_set():
    with pytest.raises(ValidationError):
        mmd(np.zeros((0, 3)), np.zeros((2, 3)))
    with pytest.raises(ShapeError):
        mmd(np.zeros((2, 3)), np.zeros((2, 4)))


@pytest.mark.parametrize("size_n,size_m", list(itertools.product([1, 2, 5, 16], [1, 3, 16])))
def test_mmd_matches_brute_force(size_n, size_m):
    rng = np.random.default_rng(size_n * 31 + size_m)
    n = rng.standard_normal((size_n, 2, 3))
    m = rng.standard_normal((size_m, 2, 3)) * 1.3 + 0.2
    h = median_bandwidth(n.reshape(size_n, -1), m.reshape(size_m, -1))
    spec = KernelSpec()
    assert abs(mmd(n, m, spec).item() - brute_mmd(n, m, [s * h for s in spec.scales])) < 1e-10


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 12), st.integers(1, 12))
def test_mmd_non_negative(seed, a, b):
    r = np.random.default_rng(seed)
    assert mmd(r.standard_normal((a, 4)), r.standard_normal((b, 4)) * r.uniform(0.1, 3)).item() >= -1e-12


def test_mmd_separates_distributions():
    r = np.random.default_rng(0)
    p, q = r.standard_normal((256, 1)), r.standard_normal((256, 1))
    shifted = r.standard_normal((256, 1)) + 3.0
    assert mmd(p, shifted).item() > mmd(p, q).item()


def test_ada_mmd_endpoints(rng):
    eps, eps_hat = rng.standard_normal((6, 2, 4)), rng.standard_normal((6, 2, 4))
    _, lo = ada_mmd_loss(eps, eps_hat, np.array(-30.0))
    _, hi = ada_mmd_loss(eps, eps_hat, np.array(30.0))
    _, mid = ada_mmd_loss(eps, eps_hat, np.array(0.0))
    assert abs(lo.l_total - lo.l_noise) < 1e-12
    assert abs(hi.l_total - hi.l_mmd) < 1e-12
    assert mid.omega == 0.5
    assert mid.l_total == pytest.approx(0.5 * mid.l_noise + 0.5 * mid.l_mmd, abs=1e-15)
    _, f0 = ada_mmd_loss(eps, eps_hat, None, fixed_omega=0.0)
    _, f1 = ada_mmd_loss(eps, eps_hat, None, fixed_omega=1.0)
    assert f0.l_total == f0.l_noise and f1.l_total == f1.l_mmd
    _, off = ada_mmd_loss(eps, eps_hat, np.array(0.0), use_mmd=False)
    assert off.l_total == off.l_noise and off.omega == 0.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-8, 8))
def test_breakdown_invariant(seed, logit):
    r = np.random.default_rng(seed)
    _, br = ada_mmd_loss(r.standard_normal((5, 3)), r.standard_normal((5, 3)), np.array(logit))
    assert abs(br.l_total - ((1 - br.omega) * br.l_noise + br.omega * br.l_mmd)) < 1e-12
    assert br.omega == pytest.approx(1 / (1 + math.exp(-logit)), rel=1e-12)


@pytest.mark.parametrize("seed", range(4))
def test_gradients(seed):
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal((5, 2, 3))
    spec = KernelSpec(bandwidth=1.7)

    def build_total(eps_hat, logit):
        return ada_mmd_loss(eps, eps_hat, logit, spec)[0]

    def build_mmd(n, m):
        return mmd(n, m, spec)

    arrays = {"eps_hat": rng.standard_normal((5, 2, 3)), "logit": np.array(rng.normal())}
    assert max_rel_error(build_total, arrays, rng) < 1e-4
    assert max_rel_error(build_mmd, {"n": rng.standard_normal((4, 3)), "m": rng.standard_normal((6, 3))}, rng) < 1e-4
