"""Multiplier methods for two-block linearly coupled problems.

Problem::

    min f(u) + g(v)   s.t.  M u + N v = b      (equality coupling)
                      or    M u + N v <= b     (inequality coupling)

Equality coupling is handled by the Bregman augmented Lagrangian family,
whose penalty is ``(1/gamma) h*(grad h(w) + gamma (M u + N v - b))`` for a
Legendre kernel ``h`` on the multiplier:

* :func:`bregman_alm_step` (joint minimization in ``u, v``)
* :func:`bregman_admm_step` (alternating)
* :func:`sym_bregman_admm_step` (alternating, two multiplier updates)
* :func:`vm_admm_step` (variable-metric ADMM, written with explicit
  ``||.||_{L^{-1}}`` penalties)

Inequality coupling uses the exponential penalty ``psi(t) = e^t - 1`` and
multiplicative multiplier updates, stored here as additive updates of
``log w``:

* :func:`emm_step`, :func:`ademm_step`, :func:`sym_ademm_step`

:func:`check_dual_equivalence` compares a multiplier-method trace with a
splitting run on the dual problem.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import logsumexp

from .errors import (
    ConstructionError,
    ExponentOverflow,
    MisalignedTraces,
    NumericalError,
    SchemaError,
    ShapeError,
)
from .legendre import BoltzmannShannon, Energy, Quadratic, as_vector
from .operators import ProxOracle, smooth_oracle

__all__ = [
    "QuadraticBlock",
    "LinearBlock",
    "TwoBlockProblem",
    "MultiplierState",
    "EquivalenceReport",
    "bregman_alm_step",
    "bregman_admm_step",
    "sym_bregman_admm_step",
    "vm_admm_step",
    "emm_step",
    "ademm_step",
    "sym_ademm_step",
    "run_multiplier",
    "dual_resolvent_oracles",
    "recover_primal",
    "aligned_start",
    "check_dual_equivalence",
    "problem_from_dict",
    "METHODS",
]

_LOG_MAX = float(np.log(np.finfo(float).max))
_ENTROPY = BoltzmannShannon()


# ---------------------------------------------------------------------------
# block oracles
# ---------------------------------------------------------------------------


class QuadraticBlock:
    """``f(u) = u^T P u / 2 + q^T u`` with ``P`` symmetric positive semidefinite.

    Provides the penalized subproblem solvers used by every multiplier
    method and the conjugate gradient used on the dual side.
    """

    def __init__(self, P, q):
        q = np.atleast_1d(np.asarray(q, dtype=float))
        P = np.asarray(P, dtype=float)
        if P.ndim == 0:
            P = P * np.eye(q.size)
        P = np.atleast_2d(P)
        if P.shape != (q.size, q.size):
            raise ShapeError(f"P has shape {P.shape}, expected {(q.size, q.size)}")
        self.P, self.q = P, q
        self.dim = q.size

    def value(self, u):
        return float(0.5 * u @ self.P @ u + self.q @ u)

    def grad(self, u):
        return self.P @ u + self.q

    def quadratic_argmin(self, H, g0):
        """``argmin f(u) + u^T H u / 2 + g0^T u``."""
        return np.linalg.solve(self.P + H, -self.q - g0)

    def penalized_argmin(self, kernel, gamma, s0, A, warm=None):
        """``argmin_u f(u) + (1/gamma) h*(s0 + gamma A u)``.

        Energy and quadratic kernels reduce to one linear solve; other
        kernels use damped Newton iterations on the smooth objective.
        """
        if isinstance(kernel, Energy):
            return self.quadratic_argmin(gamma * A.T @ A, A.T @ s0)
        if isinstance(kernel, Quadratic):
            LiA = kernel.solve(A)
            return self.quadratic_argmin(gamma * A.T @ LiA, LiA.T @ s0)
        return self._newton(kernel, gamma, s0, A, warm)

    def _newton(self, kernel, gamma, s0, A, warm, tol=1e-13, max_iter=200):
        u = np.zeros(self.dim) if warm is None else np.array(warm, dtype=float)

        def phi(u):
            s = s0 + gamma * A @ u
            try:
                kernel.check_dual(s)
            except Exception:
                return np.inf
            with np.errstate(over="ignore"):
                return self.value(u) + kernel.conj(s) / gamma

        f_u = phi(u)
        if not np.isfinite(f_u):
            u = np.zeros(self.dim)
            f_u = phi(u)
        for _ in range(max_iter):
            s = s0 + gamma * A @ u
            g = self.grad(u) + A.T @ kernel.grad_conj(s)
            scale = 1.0 + float(np.max(np.abs(self.q))) + float(np.max(np.abs(A.T @ kernel.grad_conj(s))))
            if float(np.max(np.abs(g))) <= tol * scale:
                return u
            H = self.P + gamma * A.T @ kernel.hess_conj(s) @ A
            try:
                d = np.linalg.solve(H, -g)
            except np.linalg.LinAlgError:
                d = np.linalg.lstsq(H, -g, rcond=None)[0]
            t, slope = 1.0, float(g @ d)
            while t > 1e-14:
                cand = u + t * d
                f_c = phi(cand)
                if f_c <= f_u + 1e-4 * t * slope or (abs(f_c - f_u) <= 1e-15 * max(1.0, abs(f_u)) and t == 1.0):
                    break
                t *= 0.5
            else:
                break
            u, f_u = cand, f_c
        s = s0 + gamma * A @ u
        g = self.grad(u) + A.T @ kernel.grad_conj(s)
        if not np.all(np.isfinite(g)) or float(np.max(np.abs(g))) > 1e-9 * (1.0 + float(np.max(np.abs(self.q)))):
            raise NumericalError(f"penalized subproblem did not converge (gradient {float(np.max(np.abs(g))):.3e})")
        return u

    def conj_grad(self, y):
        """``grad f*(y) = P^{-1} (y - q)`` (needs ``P`` positive definite)."""
        return np.linalg.solve(self.P, y - self.q)

    def conj_hess(self, y):
        return np.linalg.inv(self.P)


class LinearBlock(QuadraticBlock):
    """``f(u) = q^T u``.

    Under the entropy kernel, when every row of the coupling matrix selects
    exactly one coordinate with coefficient 1 (as in transport duals), the
    penalized subproblem has the closed form
    ``u_i = (log(-q_i) - logsumexp_{j -> i} s0_j) / gamma``.
    """

    def __init__(self, q):
        q = np.atleast_1d(np.asarray(q, dtype=float))
        super().__init__(np.zeros((q.size, q.size)), q)

    def penalized_argmin(self, kernel, gamma, s0, A, warm=None):
        if isinstance(kernel, BoltzmannShannon) and _is_selector(A):
            owner = np.argmax(A, axis=1)
            u = np.empty(self.dim)
            for i in range(self.dim):
                rows = owner == i
                if not rows.any() or not self.q[i] < 0:
                    raise NumericalError(f"penalized subproblem unbounded in coordinate {i}")
                u[i] = (np.log(-self.q[i]) - logsumexp(s0[rows])) / gamma
            return u
        return super().penalized_argmin(kernel, gamma, s0, A, warm)

    def conj_grad(self, y):
        raise ConstructionError("a linear function has no differentiable conjugate")


def _is_selector(A):
    return bool(np.all((A == 0) | (A == 1)) and np.all(A.sum(axis=1) == 1))


def _stack(f, g):
    P = np.block([[f.P, np.zeros((f.dim, g.dim))], [np.zeros((g.dim, f.dim)), g.P]])
    return QuadraticBlock(P, np.concatenate([f.q, g.q]))


@dataclass
class TwoBlockProblem:
    """Data of a two-block problem; see the module docstring."""

    f: QuadraticBlock
    g: QuadraticBlock
    M: np.ndarray
    N: np.ndarray
    b: np.ndarray
    coupling: str = "equality"

    def __post_init__(self):
        self.M = np.atleast_2d(np.asarray(self.M, dtype=float))
        self.N = np.atleast_2d(np.asarray(self.N, dtype=float))
        self.b = np.atleast_1d(np.asarray(self.b, dtype=float))
        m = self.b.size
        if self.M.shape != (m, self.f.dim):
            raise ShapeError(f"M has shape {self.M.shape}, expected {(m, self.f.dim)}")
        if self.N.shape != (m, self.g.dim):
            raise ShapeError(f"N has shape {self.N.shape}, expected {(m, self.g.dim)}")
        if self.coupling not in ("equality", "inequality"):
            raise SchemaError(f"coupling must be 'equality' or 'inequality', got {self.coupling!r}")

    @property
    def m(self):
        return self.b.size

    def residual(self, u, v):
        return self.M @ u + self.N @ v - self.b

    def objective(self, u, v):
        return self.f.value(u) + self.g.value(v)


@dataclass
class MultiplierState:
    """Iterate of a multiplier method.

    ``w`` is the multiplier. In inequality mode the authoritative value is
    ``log_w`` and ``w`` is its exponential. ``w_half`` holds the
    intermediate multiplier of the symmetric variants.
    """

    u: np.ndarray
    v: np.ndarray
    w: np.ndarray
    k: int = 0
    log_w: Optional[np.ndarray] = None
    w_half: Optional[np.ndarray] = None
    extras: dict = field(default_factory=dict)

    @classmethod
    def start(cls, problem, w=None, u=None, v=None, log_w=None):
        u = np.zeros(problem.f.dim) if u is None else as_vector(u, "u")
        v = np.zeros(problem.g.dim) if v is None else as_vector(v, "v")
        if log_w is not None:
            log_w = as_vector(log_w, "log_w")
            return cls(u, v, _exp_checked(log_w), 0, log_w)
        if w is None:
            w = np.ones(problem.m) if problem.coupling == "inequality" else np.zeros(problem.m)
        w = as_vector(w, "w")
        if problem.coupling == "inequality":
            _ENTROPY.check_primal(w, name="w")
            return cls(u, v, w, 0, np.log(w))
        return cls(u, v, w, 0)


def _exp_checked(log_w, iteration=None):
    over = log_w > _LOG_MAX
    if over.any():
        j = int(np.flatnonzero(over)[0])
        raise ExponentOverflow(
            f"multiplier {j} overflows (log value {log_w[j]:.6g})", index=j, iteration=iteration
        )
    return np.exp(log_w)


def _check_inequality(problem):
    if problem.coupling != "inequality":
        raise ConstructionError("exponential multiplier methods need inequality coupling")


# ---------------------------------------------------------------------------
# equality coupling
# ---------------------------------------------------------------------------


def bregman_alm_step(kernel, problem, gamma, state):
    """Bregman augmented Lagrangian step (joint ``u, v`` minimization).

    ``(u, v) = argmin f + g + (1/gamma) h*(grad h(w) + gamma (M u + N v - b))``
    then ``w+ = grad h*(grad h(w) + gamma (M u + N v - b))``.
    """
    s = kernel.grad(state.w)
    joint = _stack(problem.f, problem.g)
    A = np.hstack([problem.M, problem.N])
    uv = joint.penalized_argmin(kernel, gamma, s - gamma * problem.b, A)
    u, v = uv[: problem.f.dim], uv[problem.f.dim:]
    w = kernel.grad_conj(s + gamma * problem.residual(u, v))
    return MultiplierState(u, v, w, state.k + 1)


def bregman_admm_step(kernel, problem, gamma, state):
    """Bregman ADMM: ``u`` with the previous ``v``, ``v`` with the new ``u``,
    then ``grad h(w+) = grad h(w) + gamma (M u + N v - b)``."""
    s = kernel.grad(state.w)
    M, N, b = problem.M, problem.N, problem.b
    u = problem.f.penalized_argmin(kernel, gamma, s + gamma * (N @ state.v - b), M, warm=state.u)
    v = problem.g.penalized_argmin(kernel, gamma, s + gamma * (M @ u - b), N, warm=state.v)
    w = kernel.grad_conj(s + gamma * problem.residual(u, v))
    return MultiplierState(u, v, w, state.k + 1)


def sym_bregman_admm_step(kernel, problem, gamma, state):
    """Symmetric Bregman ADMM: ``u``, half multiplier update, ``v``, second
    multiplier update, in that order."""
    s = kernel.grad(state.w)
    M, N, b = problem.M, problem.N, problem.b
    u = problem.f.penalized_argmin(kernel, gamma, s + gamma * (N @ state.v - b), M, warm=state.u)
    s_half = s + gamma * problem.residual(u, state.v)
    v = problem.g.penalized_argmin(kernel, gamma, s_half + gamma * (M @ u - b), N, warm=state.v)
    w = kernel.grad_conj(s_half + gamma * problem.residual(u, v))
    return MultiplierState(u, v, w, state.k + 1, w_half=kernel.grad_conj(s_half))


def vm_admm_step(L, problem, gamma, state):
    """Variable-metric ADMM with penalty ``(1/2 gamma) ||gamma r + L w||^2_{L^{-1}}``.

    The multiplier update is ``w+ = w + gamma L^{-1} (M u + N v - b)``.

    Raises
    ------
    ConstructionError
        If ``L`` is not symmetric positive definite.
    """
    L = np.atleast_2d(np.asarray(L, dtype=float))
    if L.shape != (problem.m, problem.m) or np.max(np.abs(L - L.T)) > 1e-12 * max(1.0, np.max(np.abs(L))):
        raise ConstructionError("L must be a symmetric m-by-m matrix")
    try:
        fac = cho_factor(L)
    except np.linalg.LinAlgError:
        raise ConstructionError("L is not positive definite") from None
    M, N, b, w = problem.M, problem.N, problem.b, state.w
    LiM, LiN = cho_solve(fac, M), cho_solve(fac, N)
    c = gamma * (N @ state.v - b) + L @ w
    u = problem.f.quadratic_argmin(gamma * M.T @ LiM, LiM.T @ c)
    c = gamma * (M @ u - b) + L @ w
    v = problem.g.quadratic_argmin(gamma * N.T @ LiN, LiN.T @ c)
    w_next = w + gamma * cho_solve(fac, problem.residual(u, v))
    return MultiplierState(u, v, w_next, state.k + 1)


# ---------------------------------------------------------------------------
# inequality coupling
# ---------------------------------------------------------------------------


def _log_w(state):
    return state.log_w if state.log_w is not None else np.log(state.w)


def _mult_state(u, v, log_w, k, log_half=None):
    w = _exp_checked(log_w, iteration=k)
    half = None if log_half is None else _exp_checked(log_half, iteration=k)
    return MultiplierState(u, v, w, k, log_w, half)


def emm_step(problem, gamma, state):
    """Exponential multiplier method step.

    Joint ``(u, v)`` minimization of
    ``f + g + (1/gamma) sum_j w_j psi(gamma (M_j u + N_j v - b_j))`` with
    ``psi(t) = e^t - 1``, then ``w_j <- w_j exp(gamma residual_j)``.
    """
    _check_inequality(problem)
    lw = _log_w(state)
    joint = _stack(problem.f, problem.g)
    A = np.hstack([problem.M, problem.N])
    uv = joint.penalized_argmin(_ENTROPY, gamma, lw - gamma * problem.b, A)
    u, v = uv[: problem.f.dim], uv[problem.f.dim:]
    return _mult_state(u, v, lw + gamma * problem.residual(u, v), state.k + 1)


def ademm_step(problem, gamma, state):
    """Alternating-direction exponential multiplier method step."""
    _check_inequality(problem)
    lw = _log_w(state)
    M, N, b = problem.M, problem.N, problem.b
    u = problem.f.penalized_argmin(_ENTROPY, gamma, lw + gamma * (N @ state.v - b), M, warm=state.u)
    v = problem.g.penalized_argmin(_ENTROPY, gamma, lw + gamma * (M @ u - b), N, warm=state.v)
    return _mult_state(u, v, lw + gamma * problem.residual(u, v), state.k + 1)


def sym_ademm_step(problem, gamma, state):
    """Symmetric ADEMM: ``u``, half multiplicative update, ``v``, second
    multiplicative update.

    The half update uses the ``v`` available when it runs (the previous
    iterate's).
    """
    _check_inequality(problem)
    lw = _log_w(state)
    M, N, b = problem.M, problem.N, problem.b
    u = problem.f.penalized_argmin(_ENTROPY, gamma, lw + gamma * (N @ state.v - b), M, warm=state.u)
    l_half = lw + gamma * problem.residual(u, state.v)
    v = problem.g.penalized_argmin(_ENTROPY, gamma, l_half + gamma * (M @ u - b), N, warm=state.v)
    return _mult_state(u, v, l_half + gamma * problem.residual(u, v), state.k + 1, l_half)


METHODS = {
    "alm": lambda kernel, p, g, s: bregman_alm_step(kernel, p, g, s),
    "admm": lambda kernel, p, g, s: bregman_admm_step(kernel, p, g, s),
    "sym_admm": lambda kernel, p, g, s: sym_bregman_admm_step(kernel, p, g, s),
    "vm_admm": lambda kernel, p, g, s: vm_admm_step(kernel.L, p, g, s),
    "emm": lambda kernel, p, g, s: emm_step(p, g, s),
    "ademm": lambda kernel, p, g, s: ademm_step(p, g, s),
    "sym_ademm": lambda kernel, p, g, s: sym_ademm_step(p, g, s),
}


def run_multiplier(method, kernel, problem, gamma, state, max_iter, tol=0.0):
    """Iterate a multiplier method; returns the list of per-iteration records.

    Each record holds the iterate produced by step ``k`` together with the
    multiplier it started from (``w_prev``) and the ``v`` it used
    (``v_prev``). Stops early when the mirror-space multiplier change falls
    below ``tol``; a negative ``tol`` always runs ``max_iter`` steps.
    """
    if method not in METHODS:
        raise ConstructionError(f"unknown multiplier method {method!r}")
    if method == "vm_admm" and not isinstance(kernel, Quadratic):
        raise ConstructionError("vm_admm needs the quadratic kernel to supply L")
    step = METHODS[method]
    log_space = method in ("emm", "ademm", "sym_ademm")
    records = []
    for k in range(max_iter):
        nxt = step(kernel, problem, gamma, state)
        if not (np.all(np.isfinite(nxt.u)) and np.all(np.isfinite(nxt.v))):
            raise NumericalError("non-finite primal iterate", iteration=k + 1)
        records.append({"u": nxt.u, "v": nxt.v, "w": nxt.w, "w_prev": state.w,
                        "v_prev": state.v, "w_half": nxt.w_half, "log_w": nxt.log_w})
        if log_space:
            delta = float(np.max(np.abs(nxt.log_w - _log_w(state))))
        else:
            delta = float(np.max(np.abs(kernel.grad(nxt.w) - kernel.grad(state.w))))
        state = nxt
        if delta <= tol:
            break
    return records, state


# ---------------------------------------------------------------------------
# dual side and equivalence checks
# ---------------------------------------------------------------------------


def _selector_projection(A, target):
    owner = np.argmax(A, axis=1)

    def project(y):
        out = np.empty_like(y)
        for i, t in enumerate(target):
            rows = owner == i
            out[rows] = y[rows] * (t / np.sum(y[rows]))
        return out

    return project


def dual_resolvent_oracles(problem):
    """Resolvents of the dual operators ``A(w) = -M df*(-M^T w)`` and
    ``B(w) = -N dg*(-N^T w) + b``.

    Quadratic blocks with positive definite ``P`` give smooth operators and
    use Newton oracles; linear blocks give normal cones of
    ``{w : M^T w = -q}`` whose entropic resolvent (for selector coupling
    matrices) is a groupwise normalization, preceded for ``B`` by the tilt
    ``w * exp(-gamma b)``.
    """
    M, N, b = problem.M, problem.N, problem.b

    def make(block, A, shift):
        if isinstance(block, LinearBlock):
            if not _is_selector(A):
                raise ConstructionError("linear blocks need selector coupling matrices")
            project = _selector_projection(A, -block.q)

            def solve(kernel, gamma, z):
                if not isinstance(kernel, BoltzmannShannon):
                    raise ConstructionError("linear dual resolvents need the entropy kernel")
                return project(z * np.exp(-gamma * shift))

            return ProxOracle(solve=solve, name="dual-normal-cone")
        Pinv = np.linalg.inv(block.P)

        def grad(w):
            return -A @ block.conj_grad(-A.T @ w) + shift

        def hess(w):
            return A @ Pinv @ A.T

        return smooth_oracle(grad, hess, name="dual-smooth")

    return make(problem.f, M, np.zeros(problem.m)), make(problem.g, N, b)


def recover_primal(kernel, problem, gamma, z, x, y):
    """Recover ``(v, u)`` from one dual splitting step.

    Uses ``grad h(x) - grad h(z) = gamma (N v - b)`` and
    ``grad h(y) - grad h(2x - z) = gamma M u`` (mirror-space reflections),
    solved in the least-squares sense.
    """
    gz, gx, gy = kernel.grad(z), kernel.grad(x), kernel.grad(y)
    v = np.linalg.lstsq(problem.N, (gx - gz) / gamma + problem.b, rcond=None)[0]
    u = np.linalg.lstsq(problem.M, (gy - (2 * gx - gz)) / gamma, rcond=None)[0]
    return v, u


def aligned_start(kernel, problem, gamma, z0, B_prox):
    """Multiplier-method start matching a dual splitting run from ``z0``.

    Returns ``(w0, v_prev)`` with ``w0 = J_B(z0)`` and ``v_prev`` the
    ``v`` recovered from that resolvent, so that
    ``grad h(z0) = grad h(w0) - gamma (N v_prev - b)``.
    """
    from .operators import resolvent_step

    x0 = resolvent_step(kernel, B_prox, gamma, z0)
    v = np.linalg.lstsq(problem.N, (kernel.grad(x0) - kernel.grad(z0)) / gamma + problem.b,
                        rcond=None)[0]
    return x0, v


@dataclass
class EquivalenceReport:
    """Per-relation, per-iteration deviations between two traces."""

    relation: str
    deviations: dict
    tol: float
    passed: bool
    max_deviation: float
    first_failure: Optional[int]
    alignment: str

    def summary(self):
        worst = ", ".join(f"{k}={float(np.max(v)) if len(v) else 0.0:.3e}"
                          for k, v in self.deviations.items())
        verdict = "pass" if self.passed else f"FAIL at iteration {self.first_failure}"
        return f"{self.relation}: {verdict} (max deviation {self.max_deviation:.3e}; {worst})"


ALIGNMENT_NOTE = (
    "dual start z0 chosen freely; multiplier start w0 = J_B(z0) and v_prev recovered "
    "from that resolvent, so grad h(z0) = grad h(w0) - gamma (N v_prev - b)"
)


def check_dual_equivalence(method_trace, dual_trace, kernel, gamma, problem,
                           relation="bdrs", tol=1e-8):
    """Compare a multiplier-method trace with a dual splitting trace.

    Parameters
    ----------
    method_trace : list of dict
        Records from :func:`run_multiplier` (keys ``u, v, v_prev, w_prev``
        and ``w_half`` for symmetric variants).
    dual_trace : list of dict
        Records ``{"x", "y", "z", "z_next"}`` of successive dual steps.
    relation : {"bdrs", "bprs", "ademm"}
        ``bdrs``: ``grad h(x_{k+1}) = grad h(x_k) + gamma (M u_k + N v_k - b)``
        together with ``x_k = w_k``. ``bprs``: the two half relations
        through ``y_k = w_{k+1/2}``. ``ademm``: additionally
        ``grad h(z_{k+1}) = grad h(x_k) + gamma M u_k``.

    Returns
    -------
    EquivalenceReport

    Raises
    ------
    MisalignedTraces
        If the dual trace is not one step longer than needed.
    """
    n = len(method_trace)
    if n == 0 or len(dual_trace) < n + 1:
        raise MisalignedTraces(
            f"need {n + 1} dual records for {n} method records, got {len(dual_trace)}"
        )
    M, N, b = problem.M, problem.N, problem.b
    g = kernel.grad
    dev = {"iterate": [], "multiplier": []}
    if relation == "bprs":
        dev["half"] = []
    if relation == "ademm":
        dev["mapping"] = []
    for k in range(n):
        rec, d, d1 = method_trace[k], dual_trace[k], dual_trace[k + 1]
        u, v = rec["u"], rec["v"]
        gx, gx1 = g(d["x"]), g(d1["x"])
        dev["iterate"].append(float(np.max(np.abs(gx - g(rec["w_prev"])))))
        if relation == "bprs":
            gy = g(d["y"])
            dev["half"].append(
                float(np.max(np.abs(gy - gx - gamma * (M @ u + N @ rec["v_prev"] - b))))
            )
            dev["multiplier"].append(float(np.max(np.abs(gx1 - gy - gamma * (M @ u + N @ v - b)))))
        else:
            dev["multiplier"].append(float(np.max(np.abs(gx1 - gx - gamma * (M @ u + N @ v - b)))))
        if relation == "ademm":
            dev["mapping"].append(float(np.max(np.abs(g(d["z_next"]) - gx - gamma * (M @ u)))))
    dev = {k: np.asarray(v) for k, v in dev.items()}
    worst = np.max(np.vstack(list(dev.values())), axis=0)
    bad = np.flatnonzero(~(worst <= tol))
    return EquivalenceReport(
        relation=relation,
        deviations=dev,
        tol=tol,
        passed=bad.size == 0,
        max_deviation=float(np.max(worst)),
        first_failure=int(bad[0]) if bad.size else None,
        alignment=ALIGNMENT_NOTE,
    )


# ---------------------------------------------------------------------------
# ingestion
# ---------------------------------------------------------------------------


def _block_from_spec(spec, dim, label):
    if not isinstance(spec, dict) or "type" not in spec:
        raise SchemaError(f"{label} must be an object with a 'type' field")
    kind = spec["type"]
    try:
        if kind == "quadratic":
            P = np.asarray(spec.get("P", np.eye(dim)), dtype=float)
            q = np.asarray(spec.get("q", np.zeros(dim)), dtype=float)
            return QuadraticBlock(P, q)
        if kind == "linear":
            return LinearBlock(np.asarray(spec["q"], dtype=float))
    except (KeyError, ValueError, TypeError) as exc:
        raise SchemaError(f"{label}: {exc}") from None
    raise SchemaError(f"{label}: unknown oracle family {kind!r} (expected 'quadratic' or 'linear')")


def problem_from_dict(doc):
    """Build a :class:`TwoBlockProblem` from a JSON-style dictionary.

    Layout: ``{"M": [[...]], "N": [[...]], "b": [...], "coupling":
    "equality"|"inequality", "f": spec, "g": spec}`` where a spec is
    ``{"type": "quadratic", "P": [[...]], "q": [...]}`` or
    ``{"type": "linear", "q": [...]}``.

    Raises
    ------
    SchemaError
    """
    if not isinstance(doc, dict):
        raise SchemaError("problem document must be a JSON object")
    missing = [k for k in ("M", "N", "b", "f", "g") if k not in doc]
    if missing:
        raise SchemaError(f"problem document lacks {', '.join(missing)}")
    try:
        M = np.atleast_2d(np.asarray(doc["M"], dtype=float))
        N = np.atleast_2d(np.asarray(doc["N"], dtype=float))
        b = np.atleast_1d(np.asarray(doc["b"], dtype=float))
    except (ValueError, TypeError) as exc:
        raise SchemaError(f"M, N and b must be numeric arrays: {exc}") from None
    f = _block_from_spec(doc["f"], M.shape[1], "f")
    g = _block_from_spec(doc["g"], N.shape[1], "g")
    try:
        return TwoBlockProblem(f, g, M, N, b, doc.get("coupling", "equality"))
    except ShapeError as exc:
        raise SchemaError(str(exc)) from None
