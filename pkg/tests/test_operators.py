import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bsplit.errors import CertificateError, ConstructionError, DomainError
from bsplit.legendre import BoltzmannShannon, Burg, Energy, SimplexEntropy
from bsplit.operators import (
    MonotoneMap,
    ProxOracle,
    affine_map,
    forward_step,
    kl_linear_oracle,
    mann_step,
    quadratic_oracle,
    reflection_step,
    resolvent_step,
    simplex_linear_oracle,
    simplex_max_linear_oracle,
    smooth_oracle,
    sum_normalization_oracle,
    zero_map,
    zero_oracle,
)

E, BS = Energy(), BoltzmannShannon()


def half_sq(b):
    """Oracle for the gradient of ``||x - b||^2 / 2``."""
    b = np.atleast_1d(np.asarray(b, float))
    return quadratic_oracle(np.eye(b.size), -b)


# examples


def test_forward_examples():
    np.testing.assert_array_equal(forward_step(E, MonotoneMap(lambda x: x), 1.0, [2, 2]), [0, 0])
    np.testing.assert_allclose(forward_step(BS, zero_map(), 3.7, [0.3, 0.7]), [0.3, 0.7], rtol=1e-15)
    T = MonotoneMap(lambda x: np.array([np.log(2), 0.0]))
    np.testing.assert_allclose(forward_step(BS, T, 1.0, [1, 1]), [0.5, 1.0], rtol=1e-15)


def test_forward_burg_positive_dual_point():
    with pytest.raises(DomainError):
        forward_step(Burg(), MonotoneMap(lambda x: np.array([-10.0])), 1.0, [1.0])


def test_resolvent_examples():
    np.testing.assert_allclose(resolvent_step(E, half_sq([4]), 1.0, [2]), [3], rtol=1e-15)
    for k, z in ((E, [1.0, -2.0]), (BS, [0.2, 0.6]), (Burg(), [0.5, 3.0])):
        np.testing.assert_array_equal(resolvent_step(k, zero_oracle(), 2.0, z), z)
    np.testing.assert_allclose(resolvent_step(BS, sum_normalization_oracle(), 1.0, [0.2, 0.6]),
                               [0.25, 0.75], rtol=1e-15)


def test_reflection_examples():
    np.testing.assert_array_equal(reflection_step(E, zero_oracle(), 1.0, [1, 2]), [1, 2])
    np.testing.assert_allclose(reflection_step(E, half_sq([4]), 1.0, [2]), [4], rtol=1e-15)
    np.testing.assert_allclose(reflection_step(BS, zero_oracle(), 1.0, [0.3, 0.7]), [0.3, 0.7],
                               rtol=1e-15)


def test_mann_examples():
    z = np.array([0.4, 1.3])
    np.testing.assert_array_equal(mann_step(BS, [5.0, 5.0], 1.0, z), z)
    np.testing.assert_array_equal(mann_step(BS, [5.0, 5.0], 0.0, z), [5.0, 5.0])
    np.testing.assert_allclose(mann_step(E, [2, 2], 0.5, [0, 0]), [1, 1], rtol=1e-15)
    np.testing.assert_allclose(mann_step(BS, [4, 4], 0.5, [1, 1]), [2, 2], rtol=1e-15)


def test_mann_rejects_alpha():
    with pytest.raises(DomainError):
        mann_step(E, [1.0], 1.5, [0.0])


def test_resolvent_rejects_nonpositive_step():
    with pytest.raises(DomainError):
        resolvent_step(E, zero_oracle(), 0.0, [1.0])


def test_wrong_oracle_is_caught():
    bad = ProxOracle(solve=lambda k, g, z: z + 1.0, subgradient_at=lambda x: np.zeros_like(x))
    with pytest.raises(CertificateError):
        resolvent_step(E, bad, 1.0, [0.0, 0.0])


def test_closed_form_oracles_require_kernel():
    with pytest.raises(ConstructionError):
        resolvent_step(E, kl_linear_oracle(1.0, [0.5], [0.0]), 1.0, [1.0])
    with pytest.raises(ConstructionError):
        resolvent_step(Burg(), sum_normalization_oracle(), 1.0, [1.0, 2.0])


# properties


@st.composite
def affine_instance(draw, n=3):
    seed = draw(st.integers(0, 2**31 - 1))
    rng = np.random.default_rng(seed)
    R = rng.standard_normal((n, n))
    P = R @ R.T + 0.1 * np.eye(n)
    q = rng.standard_normal(n)
    z = rng.standard_normal(n) * 3
    gamma = draw(st.sampled_from([0.1, 0.5, 1.0, 3.0]))
    alpha = draw(st.floats(0, 1))
    return P, q, z, gamma, alpha


@settings(max_examples=100, deadline=None)
@given(affine_instance())
def test_energy_reduction(inst):
    P, q, z, gamma, alpha = inst
    n = z.size
    T = affine_map(P, q)
    J = np.linalg.solve(np.eye(n) + gamma * P, z - gamma * q)
    np.testing.assert_allclose(forward_step(E, T, gamma, z), z - gamma * (P @ z + q), atol=1e-12)
    np.testing.assert_allclose(resolvent_step(E, quadratic_oracle(P, q), gamma, z), J, atol=1e-12)
    np.testing.assert_allclose(reflection_step(E, quadratic_oracle(P, q), gamma, z), 2 * J - z,
                               atol=1e-12)
    t = z - gamma * (P @ z + q)
    np.testing.assert_allclose(mann_step(E, t, alpha, z), alpha * z + (1 - alpha) * t, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([0.1, 1.0, 10.0]))
def test_fixed_point_characterization(seed, gamma):
    rng = np.random.default_rng(seed)
    p = rng.uniform(0.1, 2.0, 4)
    alpha = rng.uniform(0.2, 2.0, 4)
    # zero of alpha (log x - log p) is x = p
    oracle = kl_linear_oracle(alpha, p, np.zeros(4))
    np.testing.assert_allclose(resolvent_step(BS, oracle, gamma, p), p, rtol=1e-10)
    R = rng.standard_normal((4, 4))
    P = R @ R.T + np.eye(4)
    xs = rng.standard_normal(4)
    np.testing.assert_allclose(resolvent_step(E, quadratic_oracle(P, -P @ xs), gamma, xs), xs,
                               atol=1e-10)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([0.1, 1.0, 10.0]))
def test_reflection_is_forward_after_resolvent(seed, gamma):
    rng = np.random.default_rng(seed)
    R = rng.standard_normal((3, 3))
    P = R @ R.T + 0.1 * np.eye(3)
    q = rng.standard_normal(3)
    z = rng.uniform(0.2, 3.0, 3)
    grad = lambda x: P @ x + q  # noqa: E731
    oracle = smooth_oracle(grad, lambda x: P)
    x = resolvent_step(BS, oracle, gamma, z)
    try:
        lhs = reflection_step(BS, oracle, gamma, z)
    except DomainError:
        return
    rhs = forward_step(BS, MonotoneMap(grad), gamma, x)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-10)


def test_simplex_oracles_match_optimality():
    rng = np.random.default_rng(3)
    k = SimplexEntropy()
    for _ in range(50):
        z = rng.dirichlet(np.ones(5))
        c = rng.standard_normal(5)
        gamma = rng.uniform(0.1, 3)
        x = resolvent_step(k, simplex_linear_oracle(c), gamma, z)
        np.testing.assert_allclose(x.sum(), 1.0, atol=1e-14)
        a1, a2 = rng.standard_normal(5), rng.standard_normal(5)
        y = resolvent_step(k, simplex_max_linear_oracle(a1, a2), gamma, z)
        # the resolvent minimizes max(a1.x, a2.x) + KL(x, z) / gamma over the simplex
        obj = lambda v: max(a1 @ v, a2 @ v) + np.sum(v * np.log(v / z)) / gamma  # noqa: E731
        for _ in range(20):
            trial = rng.dirichlet(np.ones(5))
            assert obj(y) <= obj(trial) + 1e-12
            mix = 0.999 * y + 0.001 * trial
            assert obj(y) <= obj(mix) + 1e-12
