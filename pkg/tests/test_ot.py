import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bsplit.errors import (
    ConstructionError,
    DegenerateInput,
    DegenerateKernel,
    DomainError,
    NumericalError,
    SchemaError,
    SizeError,
)
from bsplit.ot import (
    OTInstance,
    ScalingState,
    ademm_ot_step,
    bdbm_fixed_point,
    bdrs_ot_step,
    exact_ot_oracle,
    gibbs_kernel,
    inclusion_residual,
    kl_project_cols,
    kl_project_rows_with_cost,
    load_instance,
    marginal_residuals,
    random_instance,
    run_ademm_ot,
    run_bdrs_ot,
    run_sinkhorn,
    sinkhorn_step,
    write_matrix_csv,
)

from oracles import entropic_ot_dual

SWAP = [[0.0, 1.0], [1.0, 0.0]]
R, C_ = [0.7, 0.3], [0.4, 0.6]

# one BDRS step from Z = r c^T, evaluated with 40-digit arithmetic
BDRS_Y = np.array([[0.45108348785136314958, 0.24891651214863685042],
                   [0.059085093994191572021, 0.24091490600580842798]])
# rows of ones * K normalized to 1/2 for K = exp(-[[0,1],[1,0]])
ROW_PROJ = np.array([[0.36552928931500243963, 0.13447071068499756037],
                     [0.13447071068499756037, 0.36552928931500243963]])


def swap_instance(eta=1.0):
    return OTInstance(SWAP, R, C_, eta)


# instance validation


def test_instance_validation():
    with pytest.raises(DomainError):
        OTInstance(SWAP, [1.0, 0.0], C_)
    with pytest.raises(DomainError):
        OTInstance([[0.0, -1.0], [1.0, 0.0]], R, C_)
    with pytest.raises(ConstructionError):
        OTInstance(SWAP, [0.7, 0.4], C_)
    with pytest.raises(ConstructionError):
        OTInstance([[0.0, 1.0]], R, C_)
    with pytest.raises(DomainError):
        OTInstance(SWAP, R, C_, eta=0.0)
    assert swap_instance(0.25).gamma == 4.0


# kernel


def test_gibbs_kernel_examples():
    np.testing.assert_array_equal(gibbs_kernel(OTInstance(np.zeros((2, 2)), R, C_)).K, np.ones((2, 2)))
    K = gibbs_kernel(swap_instance())
    np.testing.assert_allclose(K.K, [[1, np.exp(-1)], [np.exp(-1), 1]], rtol=1e-15)
    np.testing.assert_array_equal(K.log, -np.array(SWAP))
    big = gibbs_kernel(OTInstance(np.full((2, 2), 3.0), R, C_, 1e12)).K
    np.testing.assert_allclose(big, np.ones((2, 2)), atol=1e-11)


def test_gibbs_kernel_underflow_keeps_log():
    K = gibbs_kernel(OTInstance([[0.0, 10.0], [10.0, 0.0]], R, C_, 0.01))
    assert K.K[0, 1] == 0.0
    assert K.log[0, 1] == -1000.0


# sinkhorn


@pytest.mark.parametrize("log_domain", [True, False])
def test_sinkhorn_hand_example(log_domain):
    inst = OTInstance(np.zeros((2, 2)), [0.5, 0.5], [0.5, 0.5])
    s = sinkhorn_step(np.ones((2, 2)), inst.r, inst.c, ScalingState.initial(inst), log_domain)
    np.testing.assert_allclose(s.u, [0.25, 0.25], rtol=1e-15)
    np.testing.assert_allclose(s.v, [1.0, 1.0], rtol=1e-15)
    np.testing.assert_allclose(s.plan(np.zeros((2, 2))), np.full((2, 2), 0.25), rtol=1e-15)


def test_sinkhorn_fixed_point():
    inst = random_instance(3, seed=1, eta=0.5)
    K = gibbs_kernel(inst)
    run = run_sinkhorn(inst, max_iter=5000, tol=1e-15)
    s = sinkhorn_step(K, inst.r, inst.c, run.state)
    np.testing.assert_allclose(s.plan(K.log), run.plan, rtol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([0.05, 0.1, 1.0]))
def test_sinkhorn_half_step_exactness(seed, eta):
    inst = random_instance(4, seed=seed, eta=eta)
    K = gibbs_kernel(inst)
    s = ScalingState.initial(inst, True)
    for _ in range(20):
        old_v = s.log_v
        s = sinkhorn_step(K, inst.r, inst.c, s)
        after_u = np.exp(s.log_u[:, None] + K.log + old_v[None, :])
        assert np.max(np.abs(after_u.sum(1) - inst.r)) <= 1e-12
        assert np.max(np.abs(s.plan(K.log).sum(0) - inst.c)) <= 1e-12


def test_sinkhorn_matches_independent_dual_solve():
    inst = random_instance(4, seed=0, eta=0.5)
    run = run_sinkhorn(inst, max_iter=20000, tol=1e-15)
    ref = entropic_ot_dual(inst.C, inst.r, inst.c, inst.eta)
    np.testing.assert_allclose(run.plan, ref, atol=1e-12)


def test_primal_sinkhorn_degenerates_on_underflowed_kernel():
    inst = random_instance(4, seed=4, eta=0.01)
    with pytest.raises(DegenerateKernel) as info:
        run_sinkhorn(inst, max_iter=100, log_domain=False)
    assert info.value.iteration == 1
    caught = run_sinkhorn(inst, max_iter=100, log_domain=False, catch=True)
    assert caught.event["iteration"] == 1 and caught.event["kind"] == "DegenerateKernel"


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.05, 2.0), st.integers(2, 5))
def test_log_domain_never_produces_nonfinite(seed, eta, n):
    inst = random_instance(n, seed=seed, eta=eta)
    for run in (run_sinkhorn(inst, 200), run_ademm_ot(inst, 200), run_bdrs_ot(inst, 200)):
        assert run.event is None
        assert np.all(np.isfinite(run.plan))
        assert all(np.all(np.isfinite(h)) for h in run.history)


# ADEMM


def test_ademm_first_iteration_is_sinkhorn():
    inst = random_instance(4, seed=3, eta=0.3)
    K = gibbs_kernel(inst)
    a = ademm_ot_step(inst, K, ScalingState.initial(inst))
    b = sinkhorn_step(K, inst.r, inst.c, ScalingState.initial(inst), log_domain=False)
    np.testing.assert_allclose(a.log_u, b.log_u, atol=1e-15)
    np.testing.assert_allclose(a.log_v, b.log_v, atol=1e-15)


def test_ademm_zero_cost_fixed_point():
    n = 3
    inst = OTInstance(np.zeros((n, n)), np.full(n, 1 / n), np.full(n, 1 / n))
    K = gibbs_kernel(inst)
    s = ScalingState.from_primal(np.ones(n), np.ones(n), np.full((n, n), 1 / n**2))
    nxt = ademm_ot_step(inst, K, s)
    np.testing.assert_allclose(nxt.X, np.full((n, n), 1 / n**2), rtol=1e-14)
    np.testing.assert_allclose(nxt.u, np.ones(n), rtol=1e-14)
    np.testing.assert_allclose(nxt.v, np.ones(n), rtol=1e-14)


def test_ademm_column_sums_and_positivity():
    inst = random_instance(4, seed=9, eta=0.2)
    K = gibbs_kernel(inst)
    s = ScalingState.initial(inst)
    for _ in range(50):
        s = ademm_ot_step(inst, K, s)
        # X itself underflows off the LP support; positivity lives in log_X
        assert np.all(np.isfinite(s.log_X))
        # the updated X is the implied plan diag(u) (X o K) diag(v)
        np.testing.assert_allclose(s.X.sum(0), inst.c, atol=1e-13)


def test_ademm_rejects_mismatched_gamma():
    inst = swap_instance(0.5)
    with pytest.raises(ConstructionError):
        ademm_ot_step(inst, gibbs_kernel(inst), ScalingState.initial(inst), gamma=1.0)


def test_ademm_switches_to_log_domain():
    run = run_ademm_ot(random_instance(4, seed=4, eta=0.01), max_iter=50)
    assert run.event is None
    assert run.switched_at == 1 and run.log_mode


def test_transport_lp_value_exploratory():
    # the 2x2 instance approaches its LP value 0.3; convergence is not guaranteed
    inst = swap_instance()
    ademm = run_ademm_ot(inst, 10_000)
    bdrs = run_bdrs_ot(inst, 10_000)
    assert ademm.history[-1][1] == pytest.approx(0.3, abs=1e-3)
    assert bdrs.history[-1][1] == pytest.approx(0.3, abs=1e-3)


# projections and BDRS


def test_column_projection_examples():
    Z = np.array([[0.1, 0.3], [0.3, 0.3]])
    np.testing.assert_allclose(kl_project_cols(Z, [0.4, 0.6]), Z, rtol=1e-15)
    np.testing.assert_allclose(kl_project_cols(np.ones((2, 2)), [0.4, 0.6]),
                               [[0.2, 0.3], [0.2, 0.3]], rtol=1e-15)
    with pytest.raises(DegenerateInput):
        kl_project_cols([[0.0, 1.0], [0.0, 1.0]], [0.4, 0.6])


def test_row_projection_examples():
    W = np.array([[0.2, 0.6], [0.5, 0.1]])
    np.testing.assert_allclose(kl_project_rows_with_cost(W, np.ones((2, 2)), [0.5, 0.5]),
                               W / W.sum(1, keepdims=True) * 0.5, rtol=1e-15)
    K = gibbs_kernel(swap_instance())
    np.testing.assert_allclose(kl_project_rows_with_cost(np.ones((2, 2)), K, [0.5, 0.5]), ROW_PROJ,
                               rtol=1e-15)
    with pytest.raises(DegenerateInput):
        kl_project_rows_with_cost([[0.0, 0.0], [1.0, 1.0]], K, [0.5, 0.5])
    with pytest.raises(DomainError):
        kl_project_rows_with_cost([[-1.0, 0.0], [1.0, 1.0]], K, [0.5, 0.5])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_projection_stationarity(seed):
    rng = np.random.default_rng(seed)
    inst = random_instance(3, seed=seed, eta=rng.uniform(0.1, 2))
    Z = rng.uniform(0.01, 2.0, (3, 3))
    X = kl_project_cols(Z, inst.c)
    D = np.log(X) - np.log(Z)
    assert np.max(np.ptp(D, axis=0)) <= 1e-10
    Y = kl_project_rows_with_cost(Z, gibbs_kernel(inst), inst.r)
    S = inst.C + inst.eta * (np.log(Y) - np.log(Z))
    assert np.max(np.ptp(S, axis=1)) <= 1e-10
    # the projection beats random feasible competitors
    obj = lambda Y_: np.sum(inst.C * Y_) + inst.eta * np.sum(Y_ * np.log(Y_ / Z) - Y_ + Z)  # noqa: E731
    for _ in range(10):
        T = rng.uniform(0.01, 1, (3, 3))
        T = T / T.sum(1, keepdims=True) * inst.r[:, None]
        assert obj(Y) <= obj(T) + 1e-12


def test_bdrs_one_step_frozen_values():
    inst = swap_instance()
    Z = np.outer(R, C_)
    X, Y, Zn = bdrs_ot_step(inst, Z)
    np.testing.assert_allclose(X, Z, rtol=1e-15)
    np.testing.assert_allclose(Y, BDRS_Y, rtol=1e-14)
    np.testing.assert_allclose(Zn, BDRS_Y, rtol=1e-14)


def test_bdrs_zero_cost_fixed_point():
    inst = OTInstance(np.zeros((2, 2)), R, C_)
    Z = np.outer(R, C_)
    for A in bdrs_ot_step(inst, Z):
        np.testing.assert_allclose(A, Z, rtol=1e-15)


def test_bdrs_marginal_sides():
    inst = random_instance(4, seed=12, eta=0.4)
    Z = np.outer(inst.r, inst.c)
    for _ in range(30):
        X, Y, Z = bdrs_ot_step(inst, Z)
        assert np.max(np.abs(X.sum(0) - inst.c)) <= 1e-14
        assert np.max(np.abs(Y.sum(1) - inst.r)) <= 1e-14


def test_debug_kkt_checks(monkeypatch):
    monkeypatch.setenv("BSPLIT_DEBUG_KKT", "1")
    inst = random_instance(3, seed=2)
    bdrs_ot_step(inst, np.outer(inst.r, inst.c))
    import bsplit.ot as ot
    monkeypatch.setattr(ot, "log_project_cols", lambda log_Z, c: log_Z + np.arange(log_Z.shape[0])[:, None])
    with pytest.raises(NumericalError):
        ot.log_bdrs_ot_step(inst, np.log(np.outer(inst.r, inst.c)))


# double backward


def test_bdbm_theorem_residual_and_trend():
    inst = OTInstance([[0.0, 1.0], [1.0, 2.0]], R, C_)
    fps = [bdbm_fixed_point(inst, g) for g in (1.0, 0.1, 0.01)]
    assert max(fp.theorem_residual for fp in fps) <= 1e-8
    inc = [fp.inclusion_residual for fp in fps]
    assert inc[0] > inc[1] > inc[2]


def test_inclusion_residual_of_feasible_additive_cost():
    # additive cost: every feasible plan is stationary
    inst = OTInstance([[0.0, 1.0], [1.0, 2.0]], R, C_)
    assert inclusion_residual(inst, np.outer(R, C_)) <= 1e-12


# exact oracle


def test_exact_oracle_examples():
    X, v = exact_ot_oracle(OTInstance(SWAP, [0.5, 0.5], [0.5, 0.5]))
    np.testing.assert_allclose(X, np.diag([0.5, 0.5]), atol=1e-15)
    assert v == 0.0
    X, v = exact_ot_oracle(swap_instance())
    np.testing.assert_allclose(X, [[0.4, 0.3], [0.0, 0.3]], atol=1e-15)
    assert v == pytest.approx(0.3, abs=1e-15)
    _, v = exact_ot_oracle(OTInstance([[1, 2], [3, 4]], [0.6, 0.4], [0.5, 0.5]))
    assert v == pytest.approx(2.3, abs=1e-15)
    with pytest.raises(SizeError):
        exact_ot_oracle(random_instance(5, seed=0))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 4))
def test_exact_oracle_matches_linprog(seed, n):
    from scipy.optimize import linprog
    inst = random_instance(n, seed=seed)
    X, v = exact_ot_oracle(inst)
    A = np.vstack([np.kron(np.eye(n), np.ones(n)), np.kron(np.ones(n), np.eye(n))])
    res = linprog(inst.C.ravel(), A_eq=A, b_eq=np.concatenate([inst.r, inst.c]), method="highs")
    assert v == pytest.approx(res.fun, abs=1e-12)
    r_err, c_err = marginal_residuals(X, inst.r, inst.c)
    assert max(r_err, c_err) <= 1e-14


# diagnostics and IO


def test_marginal_residual_examples():
    assert marginal_residuals(np.full((2, 2), 0.25), [0.5, 0.5], [0.5, 0.5]) == (0.0, 0.0)
    assert marginal_residuals(np.zeros((2, 2)), R, C_) == (0.7, 0.6)


def test_json_and_csv_round_trip(tmp_path):
    inst = random_instance(3, seed=7, eta=0.2)
    jp = tmp_path / "i.json"
    jp.write_text(json.dumps(inst.to_dict()))
    a = load_instance(jp)
    np.testing.assert_array_equal(a.C, inst.C)
    np.testing.assert_array_equal(a.r, inst.r)
    assert a.eta == 0.2
    cp = tmp_path / "i.csv"
    cp.write_text(write_matrix_csv(inst.C) + "\n" + write_matrix_csv(inst.r[None]) + "\n"
                  + write_matrix_csv(inst.c[None]) + "\n0.2\n")
    b = load_instance(cp)
    np.testing.assert_array_equal(b.C, inst.C)
    np.testing.assert_array_equal(b.c, inst.c)
    assert b.eta == 0.2
    assert load_instance(cp, eta=3.0).eta == 3.0


def test_matrix_csv_is_exact(tmp_path):
    X = np.random.default_rng(0).random((3, 3)) / 7
    p = tmp_path / "x.csv"
    write_matrix_csv(X, p)
    back = np.loadtxt(p, delimiter=",")
    np.testing.assert_array_equal(back, X)


def test_decimal_marginals_are_renormalized(tmp_path):
    p = tmp_path / "i.json"
    p.write_text(json.dumps({"C": SWAP, "r": [0.1, 0.2 + 0.7], "c": [1 / 3, 2 / 3]}))
    inst = load_instance(p)
    assert abs(inst.r.sum() - 1.0) <= 1e-15


@pytest.mark.parametrize("text,suffix", [
    ("{not json", ".json"),
    (json.dumps({"C": SWAP, "r": R}), ".json"),
    (json.dumps([1, 2]), ".json"),
    (json.dumps({"C": SWAP, "r": "ab", "c": C_}), ".json"),
    ("0,1\n1,0\n\n0.7,0.3\n", ".csv"),
    ("0,x\n1,0\n\n0.7,0.3\n\n0.4,0.6\n", ".csv"),
])
def test_load_instance_rejects(tmp_path, text, suffix):
    p = tmp_path / ("bad" + suffix)
    p.write_text(text)
    with pytest.raises(SchemaError):
        load_instance(p)


def test_load_instance_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_instance(tmp_path / "none.json")


def test_runs_are_deterministic():
    inst = random_instance(4, seed=21, eta=0.1)
    a, b = run_bdrs_ot(inst, 300), run_bdrs_ot(inst, 300)
    np.testing.assert_array_equal(a.plan, b.plan)
    assert a.history == b.history
