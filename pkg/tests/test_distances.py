import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffmts.distances import condition_pairs, distance_report, dtw, frechet, nearest_dtw
from diffmts.errors import ShapeError, ValidationError


def monotone_paths(n, m):
    """Every path from (0, 0) to (n-1, m-1) using steps (1,0), (0,1), (1,1)."""
    def walk(i, j):
        if (i, j) == (n - 1, m - 1):
            yield [(i, j)]
            return
        for di, dj in ((1, 0), (0, 1), (1, 1)):
            a, b = i + di, j + dj
            if a < n and b < m:
                for rest in walk(a, b):
                    yield [(i, j)] + rest
    return list(walk(0, 0))


def point_dist(x, y, i, j):
    return math.sqrt(sum((x[c][i] - y[c][j]) ** 2 for c in range(len(x))))


def brute_dtw(x, y):
    return min(sum(point_dist(x, y, i, j) for i, j in p) for p in monotone_paths(x.shape[1], y.shape[1]))


def brute_frechet(x, y):
    return min(max(point_dist(x, y, i, j) for i, j in p) for p in monotone_paths(x.shape[1], y.shape[1]))


def test_path_count_is_delannoy():
    assert len(monotone_paths(5, 5)) == 321
    assert len(monotone_paths(1, 4)) == 1


def test_exhaustive_oracle_200_pairs():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(200):
        C = int(rng.integers(1, 4))
        x = rng.standard_normal((C, int(rng.integers(1, 6))))
        y = rng.standard_normal((C, int(rng.integers(1, 6))))
        worst = max(worst, abs(dtw(x, y) - brute_dtw(x, y)), abs(frechet(x, y) - brute_frechet(x, y)))
    assert worst < 1e-10


def test_single_points():
    x, y = np.array([[0.0], [0.0]]), np.array([[3.0], [4.0]])
    assert dtw(x, y) == 5.0 and frechet(x, y) == 5.0


def test_hand_values():
    x = np.array([[0.0, 1.0, 2.0]])
    y = np.array([[0.0, 2.0]])
    # best alignment (0,0) (1,0)|(1,1) (2,1): cost 0 + 1 + 0
    assert dtw(x, y) == 1.0
    assert frechet(x, y) == 1.0


def test_metric_properties_1000_pairs():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        x = rng.standard_normal((2, int(rng.integers(1, 9))))
        y = rng.standard_normal((2, int(rng.integers(1, 9))))
        assert dtw(x, y) == pytest.approx(dtw(y, x), abs=1e-12)
        assert frechet(x, y) == pytest.approx(frechet(y, x), abs=1e-12)
        assert dtw(x, y) > 0 and frechet(x, y) > 0
        assert dtw(x, x) == 0.0 and frechet(x, x) == 0.0


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 12))
def test_bounds(seed, L):
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal((3, L)), rng.standard_normal((3, L))
    pointwise = np.linalg.norm(x - y, axis=0)
    assert dtw(x, y) <= L * pointwise.max() + 1e-12
    assert dtw(x, y) <= pointwise.sum() + 1e-12
    f = frechet(x, y)
    assert f <= pointwise.max() + 1e-12
    assert f >= max(pointwise[0], pointwise[-1]) - 1e-12
    assert f <= dtw(x, y) + 1e-12


def test_channel_mismatch():
    with pytest.raises(ShapeError):
        dtw(np.zeros((2, 3)), np.zeros((3, 3)))
    with pytest.raises(ShapeError):
        frechet(np.zeros((2, 3)), np.zeros((3, 3)))


def test_pairing_is_condition_matched():
    pairs = condition_pairs([0.9, 0.1, 0.5], [0.1, 0.5, 0.9])
    assert pairs == [(1, 0), (2, 1), (0, 2)]
    # ties go to the earlier real window, which is then used up
    assert condition_pairs([0.3, 0.3, 0.7], [0.3, 0.3]) == [(0, 0), (1, 1)]
    # nearest condition when nothing matches exactly; pool refills when exhausted
    assert condition_pairs([0.0, 1.0], [0.2, 0.9, 0.1]) == [(0, 0), (1, 1), (0, 2)]
    with pytest.raises(ValidationError):
        condition_pairs([], [0.1])


def test_report_identity_and_hand_mean():
    rng = np.random.default_rng(3)
    real = rng.standard_normal((4, 2, 5))
    conds = np.array([1.0, 1.0, 0.4, 0.2])
    assert distance_report(real, conds, real.copy(), conds) == (0.0, 0.0)
    synth = real[[3, 0, 2]] + 0.5
    sc = conds[[3, 0, 2]]
    expected_pairs = [(3, 0), (0, 1), (2, 2)]
    d_ref = np.mean([dtw(real[r], synth[s]) for r, s in expected_pairs])
    f_ref = np.mean([frechet(real[r], synth[s]) for r, s in expected_pairs])
    d, f = distance_report(real, conds, synth, sc)
    assert abs(d - d_ref) < 1e-12 and abs(f - f_ref) < 1e-12
    assert distance_report(real, conds, synth, sc, jobs=2) == (d, f)


def test_nearest_dtw():
    refs = np.zeros((3, 1, 4))
    refs[1] += 1.0
    out = nearest_dtw(np.full((2, 1, 4), 0.9), refs)
    np.testing.assert_allclose(out, [0.4, 0.4])
