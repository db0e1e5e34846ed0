import math

import numpy as np
import pytest

from bilevel_opt.errors import ContractViolation
from bilevel_opt.hypergrad import (
    HypergradBatch,
    bias_bound,
    choose_K,
    estimate_neumann,
    exact_hypergradient,
    expected_neumann,
)
from bilevel_opt.oracles import ProblemConstants
from bilevel_opt.tasks import build_quadratic
from bilevel_opt.theory import lk_squared


def scalar_task(q=1.0, L_g=2.0, mu=1.0, P=1.0):
    oracles, ref = build_quadratic(
        1, 1, mu, L_g, seed=0,
        eigenvalues=np.array([q]), P=np.array([[P]]), q=np.array([0.3]),
        r=np.array([-0.4]), r_at_origin_optimum=False, c_reg=0.2,
        family_pairs=0, noise_sigma=0.0, fy_ball_radius=4.0,
    )
    return oracles, ref


def batch_for(K, k, theta):
    return HypergradBatch(
        xi=1, zeta0=2, zetas=tuple(range(100, 100 + K - 1)), k_index=k, K=K,
        theta=theta,
    )


def test_batch_validation():
    with pytest.raises(ContractViolation):
        batch_for(3, 3, 0.5).validate(2.0)  # k out of range
    with pytest.raises(ContractViolation):
        batch_for(3, 0, 0.6).validate(2.0)  # theta > 1/L_g
    with pytest.raises(ContractViolation):
        HypergradBatch(xi=1, zeta0=2, zetas=(), k_index=0, K=3, theta=0.5).validate(2.0)


def test_estimate_product_annihilates_at_theta_times_hessian_one():
    # scalar inner Hessian 1 with theta = 1: any k >= 1 kills the correction
    oracles, _ = scalar_task(q=1.0, L_g=1.0)
    x, y = np.array([0.7]), np.array([0.2])
    key = 0
    for k in (1, 2, 3):
        est = estimate_neumann(oracles, x, y, batch_for(4, k, 1.0))
        np.testing.assert_allclose(est, oracles.grad_f_x(x, y, key), atol=1e-15)
    est0 = estimate_neumann(oracles, x, y, batch_for(4, 0, 1.0))
    expected = oracles.grad_f_x(x, y, key) - oracles.hvp_g_xy(
        x, y, 4 * 1.0 * oracles.grad_f_y(x, y, key), key
    )
    np.testing.assert_allclose(est0, expected, atol=1e-15)


def test_estimate_reduces_to_direct_gradient_when_outer_y_grad_vanishes():
    oracles, ref = scalar_task()
    x = np.array([0.6])
    y = ref.task.r.copy()  # grad_f_y = y - r = 0
    for k in range(4):
        est = estimate_neumann(oracles, x, y, batch_for(4, k, 0.5))
        np.testing.assert_allclose(est, oracles.grad_f_x(x, y, 0), atol=1e-15)


def test_estimate_scalar_weights_match_hand_rolled_oracle():
    # Q = 1, L_g = 2, theta = 1/2, K = 3: weights K*theta*(1-theta)^k
    oracles, ref = scalar_task(q=1.0, L_g=2.0, P=1.0)
    x, y = np.array([0.3]), np.array([1.1])
    correction = -np.array([[1.0]]).T @ ((y - ref.task.r) * 1.0)  # dense oracle
    for k, weight in enumerate([1.5, 0.75, 0.375]):
        est = estimate_neumann(oracles, x, y, batch_for(3, k, 0.5))
        hand = oracles.grad_f_x(x, y, 0) - weight * correction
        np.testing.assert_allclose(est, hand, atol=1e-14)


def test_expected_neumann_geometric_weight():
    oracles, ref = scalar_task(q=1.0, L_g=2.0, P=1.0)
    x, y = np.array([0.2]), np.array([0.9])
    out = expected_neumann(oracles, x, y, 0.5, 3)
    # inverse-Hessian weight (1/2)(1 + 1/2 + 1/4) = 7/8 against exact 1
    weight = 7.0 / 8.0
    hand = oracles.grad_f_x(x, y, 0) - (-1.0) * weight * (y - ref.task.r)
    np.testing.assert_allclose(out, hand, atol=1e-14)
    exact = exact_hypergradient(oracles, x, y)
    np.testing.assert_allclose(
        np.linalg.norm(out - exact), abs((1 - 7.0 / 8.0) * (y - ref.task.r)[0]),
        atol=1e-12,
    )


def test_expected_neumann_large_K_limit():
    oracles, _ = scalar_task(q=1.0, L_g=2.0)
    x, y = np.array([0.2]), np.array([0.9])
    out = expected_neumann(oracles, x, y, 0.5, 200)
    np.testing.assert_allclose(out, exact_hypergradient(oracles, x, y), atol=1e-12)


def test_expected_neumann_refuses_stochastic_oracles():
    oracles, _ = build_quadratic(2, 2, 1.0, 2.0, seed=0, noise_sigma=0.1,
                                 fy_ball_radius=2.0)
    with pytest.raises(ContractViolation):
        expected_neumann(oracles, np.zeros(2), np.zeros(2), 0.5, 3)


@pytest.mark.parametrize("K", [1, 2, 3, 5, 8, 13, 21, 32])
def test_enumerated_expectation_identity(K):
    oracles, ref = build_quadratic(3, 4, 1.0, 3.0, seed=5, noise_sigma=0.0,
                                   family_pairs=0, p_scale=1.2, fy_ball_radius=3.0)
    rng = np.random.default_rng(K)
    x = rng.standard_normal(3)
    y = rng.standard_normal(4)
    theta = 1.0 / 3.0
    mean = np.zeros(3)
    for k in range(K):
        mean += estimate_neumann(oracles, x, y, batch_for(K, k, theta))
    mean /= K
    np.testing.assert_allclose(
        mean, expected_neumann(oracles, x, y, theta, K), atol=1e-12
    )


def test_bias_domination_and_geometric_decay():
    oracles, ref = build_quadratic(3, 4, 1.0, 2.0, seed=6, noise_sigma=0.0,
                                   family_pairs=0, p_scale=1.0, fy_ball_radius=2.0)
    c = oracles.constants
    rng = np.random.default_rng(1)
    theta = 1.0 / c.L_g
    for _ in range(100):
        x = rng.standard_normal(3)
        y = ref.task.r + rng.uniform(0.1, 1.0) * _unit(rng, 4) * c.C_fy
        exact = exact_hypergradient(oracles, x, y)
        for K in range(1, 21):
            gap = np.linalg.norm(expected_neumann(oracles, x, y, theta, K) - exact)
            assert gap <= bias_bound(c, K) + 1e-12


def test_geometric_ratio_on_identity_hessian():
    # inner Hessian = mu * I inside a wider declared sandwich
    mu, L_g = 1.0, 2.0
    oracles, ref = build_quadratic(
        2, 3, mu, L_g, seed=7, eigenvalues=np.full(3, mu), family_pairs=0,
        noise_sigma=0.0, p_scale=1.0, fy_ball_radius=2.0,
    )
    x = np.array([0.4, -0.2])
    y = ref.task.r + np.array([0.3, 0.4, -0.1])
    exact = exact_hypergradient(oracles, x, y)
    theta = 1.0 / L_g
    gaps = [
        np.linalg.norm(expected_neumann(oracles, x, y, theta, K) - exact)
        for K in range(1, 15)
    ]
    for a, b in zip(gaps, gaps[1:]):
        assert b <= a * (1 - mu / L_g) + 1e-9


def test_bias_bound_formula_and_monotonicity():
    c = ProblemConstants(L_f=1, L_g=2, mu=1, C_fy=1, C_gxy=1, L_gxy=0, L_gyy=0, sigma=0)
    assert bias_bound(c, 3) == pytest.approx(0.125, abs=1e-15)
    assert bias_bound(c, 2) == pytest.approx(bias_bound(c, 1) * 0.5, abs=1e-15)
    degenerate = ProblemConstants(L_f=1, L_g=2, mu=2, C_fy=1, C_gxy=1,
                                  L_gxy=0, L_gyy=0, sigma=0)
    assert bias_bound(degenerate, 1) == 0.0
    vals = [bias_bound(c, K) for K in range(1, 30)]
    assert all(b <= a for a, b in zip(vals, vals[1:]))


def test_choose_K_examples():
    c1 = ProblemConstants(L_f=1, L_g=1, mu=1, C_fy=1, C_gxy=1, L_gxy=0, L_gyy=0, sigma=0)
    assert choose_K(c1, T=math.e) == 1
    tiny = ProblemConstants(L_f=1, L_g=1, mu=1, C_fy=0.01, C_gxy=0.01,
                            L_gxy=0, L_gyy=0, sigma=0)
    assert choose_K(tiny, T=5) == 1  # log argument below one clamps to the floor
    c10 = ProblemConstants(L_f=1, L_g=10, mu=1, C_fy=1, C_gxy=1, L_gxy=0, L_gyy=0, sigma=0)
    assert choose_K(c10, T=math.e**2) == 20


def test_choose_K_controls_bias():
    rng = np.random.default_rng(2)
    for _ in range(50):
        c = ProblemConstants(
            L_f=1.0,
            L_g=rng.uniform(1.0, 10.0),
            mu=rng.uniform(0.1, 1.0),
            C_fy=rng.uniform(0.1, 5.0),
            C_gxy=rng.uniform(0.1, 5.0),
            L_gxy=0,
            L_gyy=0,
            sigma=0,
        )
        T = int(rng.integers(2, 10**4))
        if c.C_gxy * c.C_fy * T / c.mu > 1.0:
            assert bias_bound(c, choose_K(c, T)) <= 1.0 / T + 1e-12


def test_exact_hypergradient_identity_instance():
    # Q = I, P = I, q = 0, r = 0, c_reg = 0: y*(x) = x and grad F(x) = x
    oracles, _ = build_quadratic(
        2, 2, 1.0, 1.0, seed=0, eigenvalues=np.ones(2), P=np.eye(2),
        q=np.zeros(2), r=np.zeros(2), r_at_origin_optimum=False, c_reg=0.0,
        family_pairs=0, noise_sigma=0.0, fy_ball_radius=3.0,
    )
    x = np.array([1.0, 2.0])
    out = exact_hypergradient(oracles, x, x.copy())
    np.testing.assert_allclose(out, x, atol=1e-10)


def test_estimator_mean_square_lipschitz_below_theory_constant():
    oracles, _ = build_quadratic(3, 3, 1.0, 2.5, seed=9, noise_sigma=0.0,
                                 family_pairs=0, p_scale=0.9, fy_ball_radius=2.0)
    c = oracles.constants
    K = 6
    theta = 1.0 / c.L_g
    lk_sq = lk_squared(c, K)
    rng = np.random.default_rng(3)
    for _ in range(50):
        x1, x2 = rng.standard_normal(3), rng.standard_normal(3)
        y = rng.standard_normal(3)
        acc = 0.0
        for k in range(K):
            d = estimate_neumann(oracles, x1, y, batch_for(K, k, theta)) - \
                estimate_neumann(oracles, x2, y, batch_for(K, k, theta))
            acc += float(d @ d)
        acc /= K
        assert acc <= lk_sq * float((x1 - x2) @ (x1 - x2)) + 1e-12


def _unit(rng, d):
    v = rng.standard_normal(d)
    return v / np.linalg.norm(v)
