"""Discrete optimal transport: scaling algorithms and exact small-instance solver.

Problem::

    min <C, X>  s.t.  X 1 = r,  X^T 1 = c,  X >= 0

and its entropic regularization with weight ``eta``. Scalings and plans are
stored as logarithms; primal-domain arithmetic is available for Sinkhorn
so that its instability can be observed.
"""

import csv
import io
import itertools
import json
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import linprog
from scipy.special import logsumexp

from .errors import (
    ConstructionError,
    DegenerateInput,
    DegenerateKernel,
    DomainError,
    NumericalError,
    SchemaError,
    SizeError,
    StabilityError,
)

__all__ = [
    "OTInstance",
    "GibbsKernel",
    "ScalingState",
    "gibbs_kernel",
    "sinkhorn_step",
    "ademm_ot_step",
    "kl_project_cols",
    "kl_project_rows_with_cost",
    "bdrs_ot_step",
    "bdbm_ot_step",
    "exact_ot_oracle",
    "marginal_residuals",
    "inclusion_residual",
    "OTRun",
    "run_sinkhorn",
    "run_ademm_ot",
    "run_bdrs_ot",
    "bdbm_fixed_point",
    "random_instance",
    "load_instance",
    "instance_from_dict",
    "write_matrix_csv",
]

MARGINAL_TOL = 1e-12
KKT_TOL = 1e-10


def _debug_kkt():
    return os.environ.get("BSPLIT_DEBUG_KKT", "") not in ("", "0", "false", "False")


@dataclass
class OTInstance:
    """Cost matrix ``C``, marginals ``r`` and ``c``, regularization ``eta``.

    Raises
    ------
    DomainError
        For a zero or negative marginal entry, a negative cost or non-positive
        ``eta``.
    ConstructionError
        For shape mismatches or marginals that do not sum to 1.
    """

    C: np.ndarray
    r: np.ndarray
    c: np.ndarray
    eta: float = 1.0

    def __post_init__(self):
        self.C = np.atleast_2d(np.asarray(self.C, dtype=float))
        self.r = np.atleast_1d(np.asarray(self.r, dtype=float))
        self.c = np.atleast_1d(np.asarray(self.c, dtype=float))
        self.eta = float(self.eta)
        if self.C.shape != (self.r.size, self.c.size):
            raise ConstructionError(
                f"C has shape {self.C.shape}, marginals have sizes {self.r.size} and {self.c.size}"
            )
        if not np.all(np.isfinite(self.C)):
            raise DomainError("C has non-finite entries")
        if np.any(self.C < 0):
            i, j = np.argwhere(self.C < 0)[0]
            raise DomainError(f"C[{i},{j}] is negative", index=(int(i), int(j)))
        for name, m in (("r", self.r), ("c", self.c)):
            bad = np.flatnonzero(~(m > 0))
            if bad.size:
                raise DomainError(f"{name}[{bad[0]}] must be positive, got {m[bad[0]]!r}",
                                  index=int(bad[0]))
            if abs(m.sum() - 1.0) > 1e-12:
                raise ConstructionError(f"{name} sums to {m.sum()!r}, expected 1")
        if not (self.eta > 0 and np.isfinite(self.eta)):
            raise DomainError(f"eta must be positive, got {self.eta!r}")

    @property
    def shape(self):
        return self.C.shape

    @property
    def gamma(self):
        """Step size identified with the regularization, ``1/eta``."""
        return 1.0 / self.eta

    def cost(self, X):
        return float(np.sum(self.C * X))

    def to_dict(self):
        return {"C": self.C.tolist(), "r": self.r.tolist(), "c": self.c.tolist(), "eta": self.eta}


@dataclass(frozen=True)
class GibbsKernel:
    """``K = exp(-C/eta)`` together with ``log K = -C/eta``."""

    K: np.ndarray
    log: np.ndarray

    def __array__(self, dtype=None, copy=None):
        return self.K if dtype is None else self.K.astype(dtype)


def gibbs_kernel(instance):
    """Gibbs kernel of an instance. Entries may underflow to 0 for small
    ``eta``; the retained logarithm never does."""
    logK = -instance.C / instance.eta
    with np.errstate(under="ignore"):
        return GibbsKernel(np.exp(logK), logK)


def _as_kernel(K):
    if isinstance(K, GibbsKernel):
        return K
    K = np.asarray(K, dtype=float)
    with np.errstate(divide="ignore"):
        return GibbsKernel(K, np.log(K))


@dataclass
class ScalingState:
    """Scalings ``u, v`` and auxiliary plan ``X``, stored as logarithms.

    ``log_mode`` records whether the iteration has moved to log-domain
    arithmetic.
    """

    log_u: np.ndarray
    log_v: np.ndarray
    log_X: np.ndarray
    log_mode: bool = False

    @classmethod
    def initial(cls, instance, log_mode=False):
        """``u = v = 1`` and ``X`` all ones."""
        n, m = instance.shape
        return cls(np.zeros(n), np.zeros(m), np.zeros((n, m)), log_mode)

    @classmethod
    def from_primal(cls, u, v, X, log_mode=False):
        with np.errstate(divide="ignore"):
            return cls(np.log(u), np.log(v), np.log(X), log_mode)

    @property
    def u(self):
        return np.exp(self.log_u)

    @property
    def v(self):
        return np.exp(self.log_v)

    @property
    def X(self):
        return np.exp(self.log_X)

    def plan_log(self, logK):
        """Logarithm of ``diag(u) (X o K) diag(v)``."""
        return self.log_u[:, None] + self.log_X + logK + self.log_v[None, :]

    def plan(self, logK):
        return np.exp(self.plan_log(logK))


def marginal_residuals(X, r, c):
    """``(||X 1 - r||_inf, ||X^T 1 - c||_inf)``."""
    X = np.asarray(X, dtype=float)
    return (float(np.max(np.abs(X.sum(axis=1) - r))),
            float(np.max(np.abs(X.sum(axis=0) - c))))


# ---------------------------------------------------------------------------
# scaling steps
# ---------------------------------------------------------------------------


def _scale_primal(Kx, r, c, log_v, iteration):
    with np.errstate(all="ignore"):
        v = np.exp(log_v)
        Kv = Kx @ v
        if np.any(Kv == 0):
            i = int(np.flatnonzero(Kv == 0)[0])
            raise DegenerateKernel(f"row {i} of the scaled kernel vanished", iteration=iteration)
        u = r / Kv
        Ktu = Kx.T @ u
        if np.any(Ktu == 0):
            j = int(np.flatnonzero(Ktu == 0)[0])
            raise DegenerateKernel(f"column {j} of the scaled kernel vanished", iteration=iteration)
        v = c / Ktu
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
        raise StabilityError("scaling overflowed to a non-finite value", iteration=iteration)
    with np.errstate(divide="ignore"):
        return np.log(u), np.log(v)


def _scale_log(logKx, r, c, log_v):
    log_u = np.log(r) - logsumexp(logKx + log_v[None, :], axis=1)
    log_v = np.log(c) - logsumexp(logKx + log_u[:, None], axis=0)
    return log_u, log_v


def sinkhorn_step(K, r, c, state, log_domain=True, iteration=None):
    """One Sinkhorn sweep ``u = r/(K v)``, then ``v = c/(K^T u)``.

    Parameters
    ----------
    K : GibbsKernel or ndarray
    state : ScalingState
        Only ``log_v`` is read; ``log_X`` is carried through unchanged.
    log_domain : bool
        Log-sum-exp arithmetic (default). With ``False`` the sweep runs on
        the primal values and can fail on underflowed kernels.

    Raises
    ------
    DegenerateKernel
        Zero denominator in primal mode.
    StabilityError
        Non-finite scaling in primal mode.
    """
    K = _as_kernel(K)
    if log_domain:
        log_u, log_v = _scale_log(K.log, r, c, state.log_v)
    else:
        log_u, log_v = _scale_primal(K.K, r, c, state.log_v, iteration)
    return ScalingState(log_u, log_v, state.log_X, log_domain)


def ademm_ot_step(instance, K, state, gamma=None, log_domain=None, iteration=None):
    """ADEMM on the transport dual, written with scalings.

    ``u = r/((X o K) v)``, ``v = c/((X o K)^T u)``, ``X_ij <- u_i X_ij K_ij v_j``.

    Primal arithmetic is used while it stays finite and nonzero; on the
    first failure the step (and every later one, via ``state.log_mode``)
    switches to log-domain arithmetic.

    Raises
    ------
    ConstructionError
        If ``gamma`` is given and differs from ``1/eta``.
    StabilityError
        If a non-finite value appears even in log-domain arithmetic.
    """
    if gamma is not None and not np.isclose(gamma, instance.gamma, rtol=1e-12, atol=0):
        raise ConstructionError(f"transport steps use gamma = 1/eta = {instance.gamma!r}, got {gamma!r}")
    K = _as_kernel(K)
    log_mode = state.log_mode if log_domain is None else log_domain
    logKx = state.log_X + K.log
    if not log_mode:
        try:
            with np.errstate(all="ignore"):
                Kx = np.exp(state.log_X) * K.K
            log_u, log_v = _scale_primal(Kx, instance.r, instance.c, state.log_v, iteration)
        except (DegenerateKernel, StabilityError):
            log_mode = True
    if log_mode:
        log_u, log_v = _scale_log(logKx, instance.r, instance.c, state.log_v)
    log_X = log_u[:, None] + logKx + log_v[None, :]
    if not (np.all(np.isfinite(log_u)) and np.all(np.isfinite(log_v)) and np.all(np.isfinite(log_X))):
        raise StabilityError("non-finite value in log-domain iterate", iteration=iteration)
    return ScalingState(log_u, log_v, log_X, log_mode)


# ---------------------------------------------------------------------------
# KL projections and BDRS
# ---------------------------------------------------------------------------


def _log_positive(Z, label):
    Z = np.asarray(Z, dtype=float)
    if np.any(~(Z >= 0)):
        raise DomainError(f"{label} must be nonnegative")
    with np.errstate(divide="ignore"):
        return np.log(Z)


def log_project_cols(log_Z, c):
    """Log form of :func:`kl_project_cols`."""
    tot = logsumexp(log_Z, axis=0)
    if np.any(np.isneginf(tot)):
        j = int(np.flatnonzero(np.isneginf(tot))[0])
        raise DegenerateInput(f"column {j} has zero mass")
    return log_Z + (np.log(c) - tot)[None, :]


def log_project_rows_with_cost(log_W, logK, r):
    """Log form of :func:`kl_project_rows_with_cost`."""
    log_WK = log_W + logK
    tot = logsumexp(log_WK, axis=1)
    if np.any(np.isneginf(tot)):
        i = int(np.flatnonzero(np.isneginf(tot))[0])
        raise DegenerateInput(f"row {i} has zero mass")
    return log_WK + (np.log(r) - tot)[:, None]


def kl_project_cols(Z, c):
    """KL projection onto ``{X : X^T 1 = c}``: each column rescaled to ``c_j``.

    Raises
    ------
    DegenerateInput
        For a zero column.
    """
    return np.exp(log_project_cols(_log_positive(Z, "Z"), np.asarray(c, dtype=float)))


def kl_project_rows_with_cost(W, K, r):
    """``argmin <C, Y> + eta D(Y, W)`` over ``{Y : Y 1 = r}``: rows of
    ``W o K`` rescaled to ``r_i``.

    Raises
    ------
    DegenerateInput
        For a zero row of ``W o K``.
    """
    K = _as_kernel(K)
    return np.exp(log_project_rows_with_cost(_log_positive(W, "W"), K.log, np.asarray(r, dtype=float)))


def _check_kkt(label, deviation, axis_name):
    if deviation > KKT_TOL:
        raise NumericalError(f"{label} stationarity violated: {axis_name} not constant (spread {deviation:.3e})")


def _spread(A, axis):
    return float(np.max(np.max(A, axis=axis) - np.min(A, axis=axis)))


def log_bdrs_ot_step(instance, log_Z, logK=None):
    """Log form of :func:`bdrs_ot_step`; returns ``(log X, log Y, log Z_next)``."""
    if logK is None:
        logK = gibbs_kernel(instance).log
    log_X = log_project_cols(log_Z, instance.c)
    log_W = 2 * log_X - log_Z
    log_Y = log_project_rows_with_cost(log_W, logK, instance.r)
    if _debug_kkt():
        _check_kkt("column projection", _spread(log_X - log_Z, 0), "columns")
        _check_kkt("row projection", _spread(instance.C + instance.eta * (log_Y - log_W), 1), "rows")
    return log_X, log_Y, log_Z + log_Y - log_X


def bdrs_ot_step(instance, Z, K=None):
    """One BDRS step on the transport problem.

    ``X = kl_project_cols(Z, c)``, ``Y = kl_project_rows_with_cost(X o X / Z, K, r)``,
    ``Z_next = Z o Y / X``. With ``BSPLIT_DEBUG_KKT=1`` both projections
    are checked against their stationarity conditions.
    """
    logK = gibbs_kernel(instance).log if K is None else _as_kernel(K).log
    out = log_bdrs_ot_step(instance, _log_positive(Z, "Z"), logK)
    return tuple(np.exp(a) for a in out)


def bdbm_ot_step(instance, log_X, gamma):
    """Double-backward step on the transport inclusion, in log form.

    ``B`` is the normal cone of ``{X^T 1 = c}`` and ``A`` is ``C`` plus the
    normal cone of ``{X 1 = r}``. Returns ``(log X', log X+)`` with
    ``X' = J_B(X)`` and ``X+ = J_A(X')``.
    """
    if not gamma > 0:
        raise DomainError(f"gamma must be positive, got {gamma!r}")
    log_mid = log_project_cols(log_X, instance.c)
    return log_mid, log_project_rows_with_cost(log_mid, -gamma * instance.C, instance.r)


def inclusion_residual(instance, X):
    """Residual of ``0 in A(X) + B(X)`` for the transport inclusion.

    Maximum of the two marginal errors and the stationarity gap
    ``min_{rho, sigma} ||C + rho 1^T + 1 sigma^T||_inf`` (interior plans
    carry no normal-cone contribution from ``X >= 0``). The gap is a small
    linear program.
    """
    n, m = instance.shape
    # variables: rho (n), sigma (m), t; minimize t with |C_ij + rho_i + sigma_j| <= t
    rows, rhs = [], []
    for i in range(n):
        for j in range(m):
            e = np.zeros(n + m + 1)
            e[i], e[n + j], e[-1] = 1.0, 1.0, -1.0
            rows.append(e)
            rhs.append(-instance.C[i, j])
            e = -e
            e[-1] = -1.0
            rows.append(e)
            rhs.append(instance.C[i, j])
    cost = np.zeros(n + m + 1)
    cost[-1] = 1.0
    res = linprog(cost, A_ub=np.array(rows), b_ub=np.array(rhs),
                  bounds=[(None, None)] * (n + m) + [(0, None)], method="highs")
    if not res.success:
        raise NumericalError(f"stationarity gap program failed: {res.message}")
    row_err, col_err = marginal_residuals(X, instance.r, instance.c)
    return max(row_err, col_err, float(res.fun))


# ---------------------------------------------------------------------------
# exact solver
# ---------------------------------------------------------------------------


def _tree_solution(edges, r, c):
    """Unique flow on a spanning tree of the bipartite graph, by leaf peeling."""
    n, m = r.size, c.size
    X = np.zeros((n, m))
    rem_r, rem_c = r.astype(float).copy(), c.astype(float).copy()
    live = set(edges)
    while live:
        deg = {}
        for i, j in live:
            deg[("r", i)] = deg.get(("r", i), 0) + 1
            deg[("c", j)] = deg.get(("c", j), 0) + 1
        for (i, j) in list(live):
            if deg[("r", i)] == 1:
                X[i, j] = rem_r[i]
            elif deg[("c", j)] == 1:
                X[i, j] = rem_c[j]
            else:
                continue
            rem_r[i] -= X[i, j]
            rem_c[j] -= X[i, j]
            live.discard((i, j))
            break
        else:
            return None
    return X


def _is_spanning_tree(edges, n, m):
    parent = list(range(n + m))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i, j in edges:
        a, b = find(i), find(n + j)
        if a == b:
            return False
        parent[a] = b
    return True


def exact_ot_oracle(instance, max_n=4):
    """Exact transport optimum by enumerating spanning-tree bases.

    Every vertex of the transportation polytope is the unique flow
    supported on some spanning tree of the complete bipartite graph with
    ``n + m - 1`` edges; all such trees are enumerated.

    Returns
    -------
    X_star : ndarray
    value : float

    Raises
    ------
    SizeError
        If either side exceeds ``max_n``.
    """
    n, m = instance.shape
    if max(n, m) > max_n:
        raise SizeError(f"exhaustive enumeration limited to n <= {max_n}, got {n}x{m}")
    cells = [(i, j) for i in range(n) for j in range(m)]
    best, best_X = np.inf, None
    for edges in itertools.combinations(cells, n + m - 1):
        if not _is_spanning_tree(edges, n, m):
            continue
        X = _tree_solution(edges, instance.r, instance.c)
        if X is None or np.any(X < -1e-14):
            continue
        X = np.maximum(X, 0.0)
        val = instance.cost(X)
        if val < best - 1e-15:
            best, best_X = val, X
    return best_X, float(best)


# ---------------------------------------------------------------------------
# runners
# ---------------------------------------------------------------------------


@dataclass
class OTRun:
    """Result of an OT run.

    ``history`` rows are ``(iteration, cost, row_err, col_err)`` of the
    reported plan; ``event`` describes the first numerical failure, if any;
    ``switched_at`` is the iteration at which arithmetic moved to the log
    domain.
    """

    algorithm: str
    plan: Optional[np.ndarray]
    iterations: int
    converged: bool
    history: list = field(default_factory=list)
    event: Optional[dict] = None
    state: object = None
    log_mode: bool = True
    switched_at: Optional[int] = None

    def residual(self):
        return max(self.history[-1][2:]) if self.history else np.inf


def _record(run, k, instance, plan):
    if not np.all(np.isfinite(plan)):
        raise StabilityError("non-finite entry in plan", iteration=k)
    re, ce = marginal_residuals(plan, instance.r, instance.c)
    run.history.append((k, instance.cost(plan), re, ce))
    return max(re, ce)


def _run(name, instance, step, state, plan_of, max_iter, tol, catch):
    run = OTRun(name, None, 0, False, state=state)
    for k in range(1, max_iter + 1):
        try:
            state = step(state, k)
            plan = plan_of(state)
            res = _record(run, k, instance, plan)
        except (NumericalError, FloatingPointError) as exc:
            if not catch:
                raise
            run.event = {"iteration": k, "kind": type(exc).__name__, "message": str(exc)}
            break
        if run.switched_at is None and getattr(state, "log_mode", False) and not getattr(run.state, "log_mode", True):
            run.switched_at = k
        run.plan, run.iterations, run.state = plan, k, state
        if res <= tol:
            run.converged = True
            break
    run.log_mode = getattr(run.state, "log_mode", True)
    return run


def run_sinkhorn(instance, max_iter=10_000, tol=0.0, log_domain=True, catch=False):
    """Sinkhorn from ``v = 1``; stops when both marginal errors are ``<= tol``."""
    K = gibbs_kernel(instance)
    return _run(
        "sinkhorn", instance,
        lambda s, k: sinkhorn_step(K, instance.r, instance.c, s, log_domain, k),
        ScalingState.initial(instance, log_domain),
        lambda s: s.plan(K.log), max_iter, tol, catch,
    )


def run_ademm_ot(instance, max_iter=10_000, tol=0.0, log_domain=False, catch=False):
    """ADEMM-OT from ``X = 1``, ``v = 1``; the reported plan is ``X``."""
    K = gibbs_kernel(instance)
    return _run(
        "ademm", instance,
        lambda s, k: ademm_ot_step(instance, K, s, iteration=k),
        ScalingState.initial(instance, log_domain),
        lambda s: s.X, max_iter, tol, catch,
    )


@dataclass
class _BdrsState:
    log_Z: np.ndarray
    log_X: np.ndarray
    log_Y: np.ndarray
    log_mode: bool = True


def run_bdrs_ot(instance, max_iter=10_000, tol=0.0, catch=False):
    """BDRS-OT from ``Z = r c^T``; the reported plan is the column-feasible ``X``."""
    logK = gibbs_kernel(instance).log

    def step(s, k):
        log_X, log_Y, log_Z = log_bdrs_ot_step(instance, s.log_Z, logK)
        if not np.all(np.isfinite(log_Z)):
            raise StabilityError("non-finite entry in Z", iteration=k)
        return _BdrsState(log_Z, log_X, log_Y)

    Z0 = np.log(np.outer(instance.r, instance.c))
    return _run("bdrs", instance, step, _BdrsState(Z0, Z0, Z0),
                lambda s: np.exp(s.log_X), max_iter, tol, catch)


@dataclass
class BdbmFixedPoint:
    """Converged double-backward iterate at step size ``gamma``.

    ``theorem_residual`` is ``||a + b||_inf`` for the resolvent selections
    ``a in A(X)`` and ``b in B(X o exp(gamma a))``, equal to
    ``||log X - log X+||_inf / gamma``.
    """

    gamma: float
    X: np.ndarray
    iterations: int
    theorem_residual: float
    inclusion_residual: float


def bdbm_fixed_point(instance, gamma, tol=1e-14, max_iter=200_000):
    """Iterate :func:`bdbm_ot_step` from ``r c^T`` until the log change is ``<= tol``."""
    log_X = np.log(np.outer(instance.r, instance.c))
    k = 0
    for k in range(1, max_iter + 1):
        _, log_next = bdbm_ot_step(instance, log_X, gamma)
        delta = float(np.max(np.abs(log_next - log_X)))
        log_X = log_next
        if delta <= tol:
            break
    _, log_next = bdbm_ot_step(instance, log_X, gamma)
    X = np.exp(log_X)
    return BdbmFixedPoint(
        gamma=gamma,
        X=X,
        iterations=k,
        theorem_residual=float(np.max(np.abs(log_X - log_next))) / gamma,
        inclusion_residual=inclusion_residual(instance, X),
    )


# ---------------------------------------------------------------------------
# instances and IO
# ---------------------------------------------------------------------------


def random_instance(n, seed, eta=1.0, cost_max=10.0):
    """Seeded instance: costs uniform on ``[0, cost_max]``, Dirichlet(1) marginals."""
    rng = np.random.default_rng(seed)
    C = rng.uniform(0.0, cost_max, size=(n, n))
    r = rng.dirichlet(np.ones(n))
    c = rng.dirichlet(np.ones(n))
    return OTInstance(C, r / r.sum(), c / c.sum(), eta)


def instance_from_dict(doc, eta=None):
    """Instance from ``{"C": [[...]], "r": [...], "c": [...], "eta": x}``.

    Marginals are renormalized when they sum to 1 only up to decimal
    rounding (1e-9), since files written by hand rarely sum exactly.
    """
    if not isinstance(doc, dict):
        raise SchemaError("instance document must be a JSON object")
    missing = [k for k in ("C", "r", "c") if k not in doc]
    if missing:
        raise SchemaError(f"instance lacks {', '.join(missing)}")
    try:
        C = np.asarray(doc["C"], dtype=float)
        r = np.asarray(doc["r"], dtype=float)
        c = np.asarray(doc["c"], dtype=float)
        e = float(doc.get("eta", 1.0) if eta is None else eta)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"non-numeric instance data: {exc}") from None
    if C.ndim != 2 or r.ndim != 1 or c.ndim != 1:
        raise SchemaError("C must be a matrix and r, c vectors")
    r, c = _renormalize(r, "r"), _renormalize(c, "c")
    return OTInstance(C, r, c, e)


def _renormalize(m, name):
    s = m.sum()
    # leave exact-enough data untouched so files round-trip bit for bit
    if np.all(m > 0) and 1e-12 < abs(s - 1.0) <= 1e-9:
        return m / s
    return m


def _read_csv_blocks(text):
    blocks, cur = [], []
    for line in text.splitlines():
        if line.strip():
            cur.append([float(x) for x in next(csv.reader([line]))])
        elif cur:
            blocks.append(cur)
            cur = []
    if cur:
        blocks.append(cur)
    return blocks


def load_instance(path, eta=None):
    """Read a JSON or CSV instance.

    The CSV layout is three blocks separated by blank lines: the rows of
    ``C``, then ``r`` on one line, then ``c`` on one line. An optional
    fourth block holds ``eta``.

    Raises
    ------
    SchemaError
        Unparseable content.
    FileNotFoundError
        Missing file.
    """
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    if str(path).lower().endswith(".csv"):
        try:
            blocks = _read_csv_blocks(text)
        except ValueError as exc:
            raise SchemaError(f"{path}: {exc}") from None
        if len(blocks) not in (3, 4):
            raise SchemaError(f"{path}: expected 3 or 4 blank-line separated blocks, got {len(blocks)}")
        doc = {"C": blocks[0], "r": blocks[1][0], "c": blocks[2][0]}
        if len(blocks) == 4:
            doc["eta"] = blocks[3][0][0]
        return instance_from_dict(doc, eta)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON: {exc}") from None
    return instance_from_dict(doc, eta)


def write_matrix_csv(X, target=None):
    """Write a matrix as CSV with 17 significant digits; returns the text
    when ``target`` is None."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in np.atleast_2d(X):
        w.writerow([format(float(x), ".17g") for x in row])
    text = buf.getvalue()
    if target is None:
        return text
    with open(target, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return text
