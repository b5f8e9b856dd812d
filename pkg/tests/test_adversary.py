import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ncc_ued.adversary import (
    AdversaryDist, adversary_gradient, ascent_step_y, best_response, entropy, gradient_mapping_residual,
    load_adversary, objective, project_simplex, project_truncated_simplex, save_adversary,
)
from ncc_ued.analysis import projection_oracle


def test_entropy_examples():
    assert entropy([0.5, 0.5]) == pytest.approx(np.log(2), abs=1e-15)
    # floor point of a 2-slot truncated simplex: -(1e-6 log 1e-6 + (1-1e-6) log(1-1e-6))
    assert entropy([1e-6, 1 - 1e-6]) == pytest.approx(1.4815510557964274e-05, rel=1e-12)
    with pytest.raises(ValueError):
        entropy([1.0, 0.0])


def test_adversary_gradient_examples():
    np.testing.assert_allclose(adversary_gradient([1.0, 2.0], [0.5, 0.5], 0.0), [1.0, 2.0])
    g = adversary_gradient([0.0, 0.0], [0.5, 0.5], 0.1)
    np.testing.assert_allclose(g, 0.1 * (np.log(2) - 1))
    with pytest.raises(ValueError):
        adversary_gradient([1.0], [0.5, 0.5], 0.1)


def test_projection_examples():
    np.testing.assert_allclose(project_truncated_simplex([2.0, 0.0], 0.0), [1.0, 0.0])
    np.testing.assert_allclose(project_truncated_simplex([2.0, 0.0], 0.1), [0.9, 0.1])
    np.testing.assert_allclose(project_truncated_simplex([0.3, 0.7], 0.1), [0.3, 0.7])
    with pytest.raises(ValueError):
        project_truncated_simplex([0.5, 0.5, 0.0], 0.5)


def _enumerate_projection(v, xi):
    # brute-force oracle: try every active set, keep the feasible KKT point
    n = v.size
    best = None
    for k in range(n):
        for act in itertools.combinations(range(n), k):
            free = np.setdiff1d(np.arange(n), act)
            nu = (v[free].sum() - (1 - xi * k)) / free.size
            z = np.full(n, xi)
            z[free] = v[free] - nu
            if z.min() < xi - 1e-12:
                continue
            d = np.linalg.norm(z - v)
            if best is None or d < best[0]:
                best = (d, z)
    return best[1]


def test_active_set_oracle_matches_enumeration(rng):
    for _ in range(200):
        n = int(rng.integers(1, 8))
        xi = float(rng.choice([0.0, 0.01, 0.1]))
        if xi * n > 1:
            xi = 0.0
        v = rng.normal(0, 2, n)
        np.testing.assert_allclose(projection_oracle(v, xi), _enumerate_projection(v, xi), atol=1e-12)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=40), st.sampled_from([0.0, 1e-6, 0.01]))
def test_projection_properties(values, xi):
    v = np.array(values)
    if xi * v.size > 1:
        return
    z = project_truncated_simplex(v, xi)
    assert abs(z.sum() - 1) <= 1e-9 and z.min() >= xi - 1e-12
    np.testing.assert_allclose(project_truncated_simplex(z, xi), z, atol=1e-12)
    np.testing.assert_allclose(z, projection_oracle(v, xi), atol=1e-8)
    # order preservation
    order = np.argsort(v, kind="stable")
    assert np.all(np.diff(z[order]) >= -1e-12)


def test_project_simplex_plain():
    np.testing.assert_allclose(project_simplex([0.2, 0.2], 1.0), [0.5, 0.5])


def test_ascent_step_stays_feasible(rng):
    y = np.full(5, 0.2)
    for _ in range(100):
        y = ascent_step_y(y, rng.normal(0, 10, 5), 0.3, 0.01)
        assert abs(y.sum() - 1) < 1e-12 and y.min() >= 0.01 - 1e-15


def test_best_response_softmax_interior():
    s = np.array([0.1, 0.3, 0.2])
    br = best_response(s, 0.5, 1e-6)
    ref = np.exp(s / 0.5) / np.exp(s / 0.5).sum()
    np.testing.assert_allclose(br.y, ref, atol=1e-14)
    assert br.converged and br.method == "softmax"


def test_best_response_hits_floor():
    s = np.array([1.0, 0.0, 0.0])
    br = best_response(s, 0.05, 0.01)
    assert br.method == "kkt" and br.converged
    np.testing.assert_allclose(br.y[1:], 0.01, atol=1e-15)
    assert gradient_mapping_residual(br.y, s, 0.05, 0.01) < 1e-10


def test_best_response_equal_scores_uniform():
    br = best_response(np.full(4, 0.7), 0.05, 1e-6)
    np.testing.assert_allclose(br.y, 0.25, atol=1e-15)


def test_best_response_grid_search_two_slots():
    s = np.array([0.4, 0.1])
    grid = np.linspace(1e-6, 1 - 1e-6, 200001)
    vals = [objective([g, 1 - g], s, 0.2) for g in grid[::100]]
    g_best = grid[::100][int(np.argmax(vals))]
    br = best_response(s, 0.2, 1e-6)
    assert abs(br.y[0] - g_best) < 1e-3


def test_pga_linear_rate():
    # strongly concave, smooth: the residual contracts geometrically
    s = np.array([0.3, 0.0, 0.1, -0.2])
    br = best_response(s, 0.5, 1e-3, method="pga", tol=1e-12)
    r = np.array(br.residuals)
    assert br.converged
    ratios = r[1:20] / r[:19]
    assert np.all(ratios < 1.0)
    np.testing.assert_allclose(br.y, best_response(s, 0.5, 1e-3).y, atol=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=2, max_size=12), st.floats(0.01, 1.0))
def test_best_response_is_a_maximiser(scores, alpha):
    s = np.array(scores)
    xi = 1e-6
    br = best_response(s, alpha, xi)
    base = objective(br.y, s, alpha)
    rng = np.random.default_rng(0)
    for _ in range(20):
        other = project_truncated_simplex(br.y + rng.normal(0, 0.05, s.size), xi)
        assert objective(other, s, alpha) <= base + 1e-10


def test_adversary_validation_and_round_trip(tmp_path):
    with pytest.raises(ValueError):
        AdversaryDist(np.array([0.5, 0.6]))
    with pytest.raises(ValueError):
        AdversaryDist(np.full(4, 0.25), xi=0.3)
    d = AdversaryDist(np.array([0.2, 0.8]), 1e-3, 0.05)
    save_adversary(tmp_path / "a.txt", d)
    e = load_adversary(tmp_path / "a.txt")
    np.testing.assert_array_equal(d.y, e.y)
    assert (e.xi, e.alpha) == (1e-3, 0.05)


def test_single_slot_step_is_inert():
    y = np.array([1.0])
    assert ascent_step_y(y, np.array([123.0]), 10.0, 1e-6)[0] == pytest.approx(1.0, abs=1e-12)
