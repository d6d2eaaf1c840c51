"""Reference problems and executable equivalence and rate checks.

Each ``check_*`` function builds its problem from a seed, runs the two sides
being compared and returns a :class:`CheckResult`. The command-line
``verify`` subcommand and the acceptance suite both call these.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .legendre import BoltzmannShannon, Quadratic, SimplexEntropy, kernel_from_name
from .multiplier import (
    LinearBlock,
    MultiplierState,
    QuadraticBlock,
    TwoBlockProblem,
    aligned_start,
    check_dual_equivalence,
    dual_resolvent_oracles,
    run_multiplier,
)
from .operators import kl_linear_oracle, simplex_linear_oracle, simplex_max_linear_oracle
from .ot import OTInstance, bdbm_fixed_point
from .splitting import (
    CompositeProblem,
    StepSchedule,
    StoppingRule,
    bdrs_step,
    bprs_step,
    certify_rate,
    run_solver,
)

__all__ = [
    "CheckResult",
    "quadratic_two_block",
    "ot_dual_problem",
    "simplex_piecewise_linear",
    "kl_smooth_pair",
    "check_thm31",
    "check_thm32",
    "check_sec33",
    "check_thm41",
    "check_bdbm",
    "check_appendix_a",
    "check_appendix_b",
    "check_smooth_descent",
    "CHECKS",
]


@dataclass
class CheckResult:
    name: str
    passed: bool
    max_deviation: float
    detail: str = ""
    data: dict = field(default_factory=dict, repr=False)

    def line(self):
        verdict = "PASS" if self.passed else "FAIL"
        return f"{verdict} {self.name}: max deviation {self.max_deviation:.3e}{'; ' + self.detail if self.detail else ''}"


# ---------------------------------------------------------------------------
# problem builders
# ---------------------------------------------------------------------------


def _spd(rng, n, shift=1.0):
    A = rng.standard_normal((n, n))
    return A @ A.T / n + shift * np.eye(n)


def quadratic_two_block(seed=0, n_u=2, n_v=2, m=3, coupling="equality"):
    """Strongly convex quadratic ``f``, ``g`` coupled through random ``M``, ``N``.

    ``b = M u0 + N v0`` for random ``u0``, ``v0`` so the constraint set is
    nonempty.
    """
    rng = np.random.default_rng(seed)
    f = QuadraticBlock(_spd(rng, n_u), rng.standard_normal(n_u))
    g = QuadraticBlock(_spd(rng, n_v), rng.standard_normal(n_v))
    M = rng.standard_normal((m, n_u))
    N = rng.standard_normal((m, n_v))
    b = M @ rng.standard_normal(n_u) + N @ rng.standard_normal(n_v)
    return TwoBlockProblem(f, g, M, N, b, coupling)


def ot_dual_problem(instance):
    """Transport dual ``max r^T alpha + c^T beta`` s.t. ``alpha_i + beta_j <= C_ij``
    as a two-block minimization with inequality coupling."""
    n, m = instance.shape
    M = np.zeros((n * m, n))
    N = np.zeros((n * m, m))
    for i in range(n):
        for j in range(m):
            M[i * m + j, i] = 1.0
            N[i * m + j, j] = 1.0
    return TwoBlockProblem(LinearBlock(-instance.r), LinearBlock(-instance.c), M, N,
                           instance.C.ravel(), "inequality")


def simplex_piecewise_linear(a1=None, a2=None, c=None, seed=None, n=5):
    """``f = max(<a1,x>, <a2,x>)`` and ``g = <c,x>`` on the probability simplex.

    With no arguments the instance is two-dimensional with its unique
    minimizer ``(11/29, 18/29)`` in the interior. Passing ``seed`` draws
    ``a1``, ``a2``, ``c`` uniformly from ``[-1, 1]^n`` instead; such
    instances usually have boundary minimizers, whose vanishing coordinates
    underflow after several thousand iterations. The optimal value is
    computed by a linear program in every case.
    """
    if seed is not None:
        rng = np.random.default_rng(seed)
        a1, a2, c = rng.uniform(-1, 1, n), rng.uniform(-1, 1, n), rng.uniform(-1, 1, n)
    elif a1 is None:
        a1, a2, c = [1.0, -0.5], [-0.8, 0.6], [0.1, -0.2]
    a1, a2, c = (np.asarray(a, dtype=float) for a in (a1, a2, c))
    n = a1.size
    # variables (x, t): minimize t + c^T x, a_i^T x <= t, sum x = 1, x >= 0
    res = linprog(np.append(c, 1.0),
                  A_ub=np.array([np.append(a1, -1.0), np.append(a2, -1.0)]), b_ub=np.zeros(2),
                  A_eq=np.append(np.ones(n), 0.0)[None, :], b_eq=[1.0],
                  bounds=[(0, None)] * n + [(None, None)], method="highs")
    x_star = np.maximum(res.x[:n], 0.0)
    x_star /= x_star.sum()

    def f_value(x):
        return float(max(a1 @ x, a2 @ x))

    def f_subgrad(x):
        return a1 if a1 @ x >= a2 @ x else a2

    G = float(max(np.max(np.abs(a1)), np.max(np.abs(a2)), np.max(np.abs(c))))
    return CompositeProblem(
        f_prox=simplex_max_linear_oracle(a1, a2),
        g_prox=simplex_linear_oracle(c),
        f_value=f_value,
        g_value=lambda x: float(c @ x),
        f_subgrad=f_subgrad,
        g_subgrad=lambda x: c,
        optimal_value=float(res.fun),
        x_star=x_star,
        G=G,
        dim=n,
    )


def kl_smooth_pair(seed=0, n=6):
    """``f = sum_i alpha_i KL(x_i,p_i) + <c1,x>`` and ``g`` likewise with ``beta``.

    Per-coordinate weights keep the forward steps from collapsing onto the
    fixed point; both functions are relatively smooth with respect to the
    entropy with ``L = max(alpha, beta)``.
    """
    rng = np.random.default_rng(seed)
    alpha, beta = rng.uniform(0.2, 2.0, n), rng.uniform(0.2, 2.0, n)
    p, q = rng.uniform(0.2, 2.0, n), rng.uniform(0.2, 2.0, n)
    c1, c2 = rng.uniform(-1, 1, n), rng.uniform(-1, 1, n)

    def kl(w, x, y):
        return float(np.sum(w * (x * np.log(x / y) - x + y)))

    prob = CompositeProblem(
        f_prox=kl_linear_oracle(alpha, p, c1),
        g_prox=kl_linear_oracle(beta, q, c2),
        f_value=lambda x: kl(alpha, x, p) + float(c1 @ x),
        g_value=lambda x: kl(beta, x, q) + float(c2 @ x),
        f_grad=lambda x: alpha * np.log(x / p) + c1,
        g_grad=lambda x: beta * np.log(x / q) + c2,
        dim=n,
    )
    return prob, float(max(alpha.max(), beta.max()))


# ---------------------------------------------------------------------------
# dual-side runs
# ---------------------------------------------------------------------------


def _dual_trace(step, kernel, A_prox, B_prox, gamma, z0, n):
    out, z = [], z0
    for _ in range(n):
        x, y, zn = step(kernel, A_prox, B_prox, gamma, z)
        out.append({"x": x, "y": y, "z": z, "z_next": zn})
        z = zn
    return out


def _equivalence(method, relation, kernel, problem, gamma, z0, iters, name, tol=1e-8):
    A_prox, B_prox = dual_resolvent_oracles(problem)
    w0, v_prev = aligned_start(kernel, problem, gamma, z0, B_prox)
    state = MultiplierState.start(problem, w=w0, v=v_prev)
    records, _ = run_multiplier(method, kernel, problem, gamma, state, iters)
    step = bprs_step if relation == "bprs" else bdrs_step
    dual = _dual_trace(step, kernel, A_prox, B_prox, gamma, z0, iters + 1)
    rep = check_dual_equivalence(records, dual, kernel, gamma, problem, relation, tol)
    return CheckResult(name, rep.passed, rep.max_deviation, rep.summary(),
                       {"report": rep, "records": records, "dual": dual})


def check_thm31(kernel="boltzmann", iters=100, gamma=0.5, seed=0):
    """Bregman ADMM against BDRS applied to the dual."""
    kernel = kernel_from_name(kernel) if isinstance(kernel, str) else kernel
    problem = quadratic_two_block(seed)
    z0 = np.ones(problem.m) if kernel.entropic else np.zeros(problem.m)
    return _equivalence("admm", "bdrs", kernel, problem, gamma, z0, iters, "thm3.1")


def check_thm41(kernel="boltzmann", iters=100, gamma=0.5, seed=0):
    """Symmetric Bregman ADMM against BPRS applied to the dual."""
    kernel = kernel_from_name(kernel) if isinstance(kernel, str) else kernel
    problem = quadratic_two_block(seed)
    z0 = np.ones(problem.m) if kernel.entropic else np.zeros(problem.m)
    return _equivalence("sym_admm", "bprs", kernel, problem, gamma, z0, iters, "thm4.1")


def check_sec33(iters=100, instance=None):
    """ADEMM on the transport dual against entropic BDRS on its dual."""
    if instance is None:
        instance = OTInstance([[0.0, 1.0], [1.0, 0.0]], [0.7, 0.3], [0.4, 0.6], 1.0)
    problem = ot_dual_problem(instance)
    z0 = np.outer(instance.r, instance.c).ravel()
    return _equivalence("ademm", "ademm", BoltzmannShannon(), problem, instance.gamma, z0,
                        iters, "sec3.3")


def check_thm32(iters=100, gamma=0.7, seed=0, tol=1e-12):
    """Variable-metric ADMM against Bregman ADMM with the quadratic kernel."""
    rng = np.random.default_rng(seed + 1000)
    problem = quadratic_two_block(seed)
    L = _spd(rng, problem.m, shift=0.5)
    kernel = Quadratic(L)
    state = MultiplierState.start(problem, w=rng.standard_normal(problem.m),
                                  v=rng.standard_normal(problem.g.dim))
    # a negative tolerance disables early stopping so both runs cover the full horizon
    a, _ = run_multiplier("vm_admm", kernel, problem, gamma, state, iters, tol=-1.0)
    b, _ = run_multiplier("admm", kernel, problem, gamma, state, iters, tol=-1.0)
    dev = [max(float(np.max(np.abs(p[key] - q[key]))) for key in ("u", "v", "w"))
           for p, q in zip(a, b)]
    worst = max(dev)
    return CheckResult("thm3.2", worst <= tol and len(a) == len(b) == iters, worst,
                       f"{len(dev)} iterations, tolerance {tol:g}", {"deviations": dev})


def check_bdbm(gammas=(1.0, 0.1, 0.01), tol=1e-8, instance=None):
    """Double-backward fixed points on a transport inclusion with additive cost.

    The theorem residual must be at most ``tol`` at every step size and the
    zero-inclusion residual must decrease strictly as the step size shrinks.
    """
    if instance is None:
        instance = OTInstance([[0.0, 1.0], [1.0, 2.0]], [0.7, 0.3], [0.4, 0.6], 1.0)
    fps = [bdbm_fixed_point(instance, g) for g in gammas]
    thm = [fp.theorem_residual for fp in fps]
    inc = [fp.inclusion_residual for fp in fps]
    monotone = all(b < a for a, b in zip(inc, inc[1:]))
    ok = max(thm) <= tol and monotone
    detail = ", ".join(f"gamma={g:g}: theorem {t:.2e} inclusion {i:.2e}"
                       for g, t, i in zip(gammas, thm, inc))
    return CheckResult("bdbm", ok, max(thm), detail, {"fixed_points": fps, "inclusion": inc})


def _rate(driver, variant, objective_point, N, seed):
    problem = simplex_piecewise_linear(seed=seed)
    kernel = SimplexEntropy()
    trace = run_solver(driver, problem, kernel, StepSchedule.inverse_sqrt(),
                       StoppingRule(kind="none"), max_iter=N, objective_point=objective_point)
    rep = certify_rate(trace, kernel, problem.G, x_star_hint=problem.x_star,
                       optimal_value=problem.optimal_value, variant=variant)
    return rep, trace


def check_appendix_a(N=10_000, seed=None):
    """Min-gap prefix bound for the alternating subgradient form."""
    rep, trace = _rate("bprs_nonsmooth", "bprs", "shadow", N, seed)
    detail = f"{rep.checked} prefixes, worst lhs/rhs {rep.worst_ratio:.3f}, L={rep.constant:.4g}"
    if rep.first_failure:
        detail += f", first failure N={rep.first_failure}"
    return CheckResult("appendixA", rep.holds, max(0.0, rep.worst_ratio), detail,
                       {"report": rep, "trace": trace})


def check_appendix_b(N=10_000, seed=None):
    """Min-gap prefix bound for Douglas-Rachford with a fitted constant."""
    rep, trace = _rate("bdrs", "bdrs", "governing", N, seed)
    detail = (f"{rep.checked} prefixes after a {rep.fit_window}-prefix fit, "
              f"fitted c={rep.constant:.4g}, worst lhs/rhs {rep.worst_ratio:.3f}")
    if rep.first_failure:
        detail += f", first failure N={rep.first_failure}"
    return CheckResult("appendixB", rep.holds, max(0.0, rep.worst_ratio), detail,
                       {"report": rep, "trace": trace})


def check_smooth_descent(iters=1000, seed=0, slack=1e-12):
    """Sufficient decrease of the smooth Peaceman-Rachford form with ``gamma = 1/L``."""
    problem, L = kl_smooth_pair(seed)
    kernel = BoltzmannShannon()
    gamma = 1.0 / L
    trace = run_solver("bprs_smooth", problem, kernel, StepSchedule.constant(gamma),
                       StoppingRule(kind="none"), max_iter=iters,
                       x0=np.ones(problem.dim))
    viol = []
    for rec in trace.iterates:
        lhs = problem.objective(rec["x"])
        rhs = problem.objective(rec["x_prev"]) - (rec["D_xy"] + rec["D_yx"]) / gamma
        viol.append(lhs - rhs)
    worst = float(max(viol))
    return CheckResult("smooth", worst <= slack, max(worst, 0.0),
                       f"{len(viol)} iterations, largest excess {worst:.3e}", {"excess": viol})


CHECKS = {
    "thm3.1": check_thm31,
    "thm3.2": check_thm32,
    "sec3.3": check_sec33,
    "thm4.1": check_thm41,
    "bdbm": check_bdbm,
    "appendixA": check_appendix_a,
    "appendixB": check_appendix_b,
    "smooth": check_smooth_descent,
}
