"""Fixed-point splitting drivers and convergence certificates.

Single steps
    :func:`mirror_descent_step`, :func:`bpg_step`, :func:`bfbs_step`,
    :func:`bppm_step`, :func:`bdrs_step`, :func:`bprs_step`,
    :func:`bdbm_step`, :func:`bprs_nonsmooth_cycle`, :func:`bprs_smooth_step`.

Driver
    :func:`run_solver` iterates any step kind on a :class:`CompositeProblem`
    and records a :class:`SolverTrace`.

Certificates
    :func:`certify_rate` checks the sublinear bound of the alternating
    proximal-subgradient scheme (and of Douglas-Rachford with a fitted
    constant) for every prefix of a trace.
"""

import csv
import io
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import (
    BsplitError,
    ConstructionError,
    MissingOptimum,
    UnboundedSubgradient,
)
from .legendre import SimplexEntropy, as_vector, bregman_divergence
from .operators import forward_step, resolvent_step

__all__ = [
    "StepSchedule",
    "StoppingRule",
    "CompositeProblem",
    "TraceRecord",
    "SolverTrace",
    "CertificateReport",
    "mirror_descent_step",
    "bpg_step",
    "bfbs_step",
    "bppm_step",
    "bdrs_step",
    "bprs_step",
    "bdbm_step",
    "bprs_nonsmooth_cycle",
    "bprs_smooth_step",
    "run_solver",
    "certify_rate",
    "default_start",
    "TRACE_HEADER",
    "DRIVERS",
]

TRACE_HEADER = (
    "iter",
    "gamma",
    "objective",
    "residual",
    "min_objective",
    "sum_gamma",
    "sum_gamma_sq",
    "wall_ns",
)


@dataclass(frozen=True)
class StepSchedule:
    """Step-size rule.

    ``kind="constant"`` uses ``gamma`` throughout; ``kind="inverse_sqrt"``
    uses ``gamma / sqrt(k)`` for ``k >= 1`` (so ``gamma=1`` gives the
    classical ``1/sqrt(k)``).
    """

    kind: str = "constant"
    gamma: float = 1.0

    def __post_init__(self):
        if self.kind not in ("constant", "inverse_sqrt"):
            raise ConstructionError(f"unknown schedule {self.kind!r}")
        if not self.gamma > 0:
            raise ConstructionError(f"step size must be positive, got {self.gamma!r}")

    @classmethod
    def constant(cls, gamma):
        return cls("constant", float(gamma))

    @classmethod
    def inverse_sqrt(cls, gamma=1.0):
        return cls("inverse_sqrt", float(gamma))

    def __call__(self, k):
        if k < 1:
            raise ValueError("iterations are numbered from 1")
        if self.kind == "constant":
            return self.gamma
        return self.gamma / np.sqrt(k)


@dataclass(frozen=True)
class StoppingRule:
    """Termination test applied after every iteration.

    ``kind="dual_residual"`` stops when
    ``||grad h(z_{k+1}) - grad h(z_k)||_inf <= tol``; ``kind="objective_gap"``
    stops when ``F - F* <= tol`` and needs the problem's optimal value;
    ``kind="none"`` always runs to ``max_iter``.
    """

    tol: float = 1e-10
    kind: str = "dual_residual"


@dataclass
class CompositeProblem:
    """``min f(x) + g(x)``, equivalently ``0 in A(x) + B(x)`` with ``A = df``, ``B = dg``.

    Every field is optional; each driver states which ones it needs.
    ``G`` bounds the sup-norm of subgradients when set.
    """

    f_prox: Optional[object] = None
    g_prox: Optional[object] = None
    f_value: Optional[Callable] = None
    g_value: Optional[Callable] = None
    f_subgrad: Optional[Callable] = None
    g_subgrad: Optional[Callable] = None
    f_grad: Optional[Callable] = None
    g_grad: Optional[Callable] = None
    optimal_value: Optional[float] = None
    x_star: Optional[np.ndarray] = None
    G: Optional[float] = None
    dim: Optional[int] = None

    def objective(self, x):
        if self.f_value is None or self.g_value is None:
            return float("nan")
        return float(self.f_value(x) + self.g_value(x))


@dataclass
class TraceRecord:
    iter: int
    gamma: float
    objective: float
    residual: float
    min_objective: float
    sum_gamma: float
    sum_gamma_sq: float
    wall_ns: int


@dataclass
class SolverTrace:
    """Append-only record of a run.

    Attributes
    ----------
    driver : str
    x0 : ndarray
        Starting point of the governing sequence.
    records : list of TraceRecord
        One per completed iteration.
    iterates : list of dict
        Per-iteration arrays (names depend on the driver).
    converged : bool
    """

    driver: str
    x0: np.ndarray
    records: list = field(default_factory=list)
    iterates: list = field(default_factory=list)
    converged: bool = False
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.records)

    def append(self, record, iterate):
        self.records.append(record)
        self.iterates.append(iterate)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    @property
    def final(self):
        """Last iterate dictionary, or the start when no iteration ran."""
        if self.iterates:
            return self.iterates[-1]
        return {"z": self.x0, "x": self.x0}

    def to_csv(self, target=None, timing=False):
        """Write the fixed-header CSV; returns the text when ``target`` is None.

        Floats are written with 17 significant digits. Unless ``timing`` is
        true the ``wall_ns`` column is written as 0 so that identical runs
        produce identical files.
        """
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for r in self.records:
            w.writerow(
                [
                    r.iter,
                    _fmt(r.gamma),
                    _fmt(r.objective),
                    _fmt(r.residual),
                    _fmt(r.min_objective),
                    _fmt(r.sum_gamma),
                    _fmt(r.sum_gamma_sq),
                    r.wall_ns if timing else 0,
                ]
            )
        text = buf.getvalue()
        if target is None:
            return text
        if hasattr(target, "write"):
            target.write(text)
        else:
            with open(target, "w", newline="") as fh:
                fh.write(text)
        return text


def _fmt(v):
    return format(float(v), ".17g")


# ---------------------------------------------------------------------------
# single steps
# ---------------------------------------------------------------------------


def _dual(kernel, s):
    kernel.check_dual(s, name="dual point")
    return kernel.grad_conj(s)


def mirror_descent_step(kernel, grad_f, gamma, x):
    """Mirror descent ``grad h*(grad h(x) - gamma grad f(x))``.

    With the simplex kernel this is the multiplicative update
    ``x * exp(-gamma grad f(x))`` followed by normalization.
    """
    return forward_step(kernel, grad_f, gamma, x)


def bpg_step(kernel, grad_f, g_prox, gamma, x):
    """Bregman proximal gradient: prox of ``g`` at the mirror-descent point."""
    return resolvent_step(kernel, g_prox, gamma, forward_step(kernel, grad_f, gamma, x))


def bfbs_step(kernel, B_map, A_prox, gamma, x):
    """Bregman forward-backward splitting ``J_{gamma A}(F_{gamma B}(x))``."""
    return resolvent_step(kernel, A_prox, gamma, forward_step(kernel, B_map, gamma, x))


def bppm_step(kernel, T_prox, gamma, x):
    """Bregman proximal point step ``J_{gamma T}(x)``."""
    return resolvent_step(kernel, T_prox, gamma, x)


def _drs_core(kernel, A_prox, B_prox, gamma, z):
    z = as_vector(z, "z")
    x = resolvent_step(kernel, B_prox, gamma, z)
    gz, gx = kernel.grad(z), kernel.grad(x)
    y = resolvent_step(kernel, A_prox, gamma, _dual(kernel, 2.0 * gx - gz))
    return x, y, gz, gx, kernel.grad(y)


def bdrs_step(kernel, A_prox, B_prox, gamma, z):
    """One Bregman Douglas-Rachford iteration.

    Returns
    -------
    x : ndarray
        ``J_{gamma B}(z)``, the shadow point.
    y : ndarray
        ``J_{gamma A}(grad h*(2 grad h(x) - grad h(z)))``.
    z_next : ndarray
        ``grad h*(grad h(z) - grad h(x) + grad h(y))``.
    """
    x, y, gz, gx, gy = _drs_core(kernel, A_prox, B_prox, gamma, z)
    return x, y, _dual(kernel, gz - gx + gy)


def bprs_step(kernel, A_prox, B_prox, gamma, z):
    """One Bregman Peaceman-Rachford iteration; ``z_next = R_A(R_B(z))``.

    Returns ``(x, y, z_next)`` with ``x, y`` as in :func:`bdrs_step` and
    ``grad h(z_next) = grad h(z) - 2 grad h(x) + 2 grad h(y)``.
    """
    x, y, gz, gx, gy = _drs_core(kernel, A_prox, B_prox, gamma, z)
    return x, y, _dual(kernel, gz - 2.0 * gx + 2.0 * gy)


def bdbm_step(kernel, A_prox, B_prox, gamma, z):
    """Bregman double-backward step ``J_{gamma A}(J_{gamma B}(z))``."""
    return resolvent_step(kernel, A_prox, gamma, resolvent_step(kernel, B_prox, gamma, z))


def _bounded(sub, G, label):
    sub = np.asarray(sub, dtype=float)
    if G is not None and float(np.max(np.abs(sub))) > G * (1 + 1e-12):
        raise UnboundedSubgradient(
            f"||d{label}||_inf = {float(np.max(np.abs(sub))):.6g} exceeds G = {G:.6g}"
        )
    return sub


def bprs_nonsmooth_cycle(kernel, problem, gamma, w):
    """Alternating Bregman proximal subgradient cycle.

    Four updates in order: subgradient mirror step on ``f`` from ``w``,
    Bregman prox of ``g``, subgradient mirror step on ``g``, Bregman prox
    of ``f``.

    Returns
    -------
    x_bar, x_next, w_bar, w_next : ndarray

    Raises
    ------
    UnboundedSubgradient
        If a subgradient exceeds ``problem.G`` in sup-norm.
    """
    w = as_vector(w, "w")
    kernel.check_primal(w, interior=True, name="w")
    sf = _bounded(problem.f_subgrad(w), problem.G, "f")
    x_bar = _dual(kernel, kernel.grad(w) - gamma * sf)
    x_next = resolvent_step(kernel, problem.g_prox, gamma, x_bar)
    sg = _bounded(problem.g_subgrad(x_next), problem.G, "g")
    w_bar = _dual(kernel, kernel.grad(x_next) - gamma * sg)
    w_next = resolvent_step(kernel, problem.f_prox, gamma, w_bar)
    return x_bar, x_next, w_bar, w_next


def bprs_smooth_step(kernel, problem, gamma, x):
    """Peaceman-Rachford in forward-backward form for smooth ``f`` and ``g``.

    ``y = J_{gamma dg}(F_{gamma grad f}(x))`` and
    ``x_next = J_{gamma df}(F_{gamma grad g}(y))``.
    """
    y = resolvent_step(kernel, problem.g_prox, gamma, forward_step(kernel, problem.f_grad, gamma, x))
    x_next = resolvent_step(
        kernel, problem.f_prox, gamma, forward_step(kernel, problem.g_grad, gamma, y)
    )
    return y, x_next


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------


def default_start(kernel, n):
    """Uniform ``1/n`` for entropic kernels, zero otherwise."""
    if kernel.entropic:
        return np.full(n, 1.0 / n)
    return np.zeros(n)


def _step_bdrs(kernel, problem, gamma, z):
    x, y, zn = bdrs_step(kernel, problem.f_prox, problem.g_prox, gamma, z)
    return zn, {"x": x, "y": y, "z": zn}, x


def _step_bprs(kernel, problem, gamma, z):
    x, y, zn = bprs_step(kernel, problem.f_prox, problem.g_prox, gamma, z)
    return zn, {"x": x, "y": y, "z": zn}, x


def _step_bdbm(kernel, problem, gamma, z):
    zn = bdbm_step(kernel, problem.f_prox, problem.g_prox, gamma, z)
    return zn, {"z": zn}, zn


def _step_bppm(kernel, problem, gamma, z):
    zn = bppm_step(kernel, problem.f_prox, gamma, z)
    return zn, {"z": zn}, zn


def _step_md(kernel, problem, gamma, z):
    zn = mirror_descent_step(kernel, problem.f_grad, gamma, z)
    return zn, {"z": zn}, zn


def _step_bpg(kernel, problem, gamma, z):
    zn = bpg_step(kernel, problem.f_grad, problem.g_prox, gamma, z)
    return zn, {"z": zn}, zn


def _step_nonsmooth(kernel, problem, gamma, w):
    x_bar, x, w_bar, wn = bprs_nonsmooth_cycle(kernel, problem, gamma, w)
    avg = 0.5 * (x + wn)
    return wn, {"x_bar": x_bar, "x": x, "w_bar": w_bar, "w": wn, "z": avg}, avg


def _step_smooth(kernel, problem, gamma, x):
    y, xn = bprs_smooth_step(kernel, problem, gamma, x)
    rec = {
        "x_prev": x,
        "y": y,
        "x": xn,
        "z": xn,
        "D_xy": kernel.divergence(x, y),
        "D_yx": kernel.divergence(y, xn),
    }
    return xn, rec, xn


DRIVERS = {
    "bdrs": _step_bdrs,
    "bprs": _step_bprs,
    "bdbm": _step_bdbm,
    "bppm": _step_bppm,
    "mirror_descent": _step_md,
    "bpg": _step_bpg,
    "bprs_nonsmooth": _step_nonsmooth,
    "bprs_smooth": _step_smooth,
}


def _annotate(exc, k):
    if getattr(exc, "iteration", None) is None:
        exc.iteration = k
        if exc.args:
            exc.args = (f"iteration {k}: {exc.args[0]}",) + tuple(exc.args[1:])
    return exc


def run_solver(
    driver,
    problem,
    kernel,
    schedule=None,
    stop=None,
    max_iter=1000,
    x0=None,
    objective_point="shadow",
    timing=False,
):
    """Iterate a step kind and record a :class:`SolverTrace`.

    Parameters
    ----------
    driver : str
        One of ``bdrs``, ``bprs``, ``bdbm``, ``bppm``, ``mirror_descent``,
        ``bpg``, ``bprs_nonsmooth``, ``bprs_smooth``. In the two-operator
        drivers ``A = df`` and ``B = dg``, so ``g``'s resolvent is applied
        first.
    problem : CompositeProblem
    kernel : LegendreKernel
    schedule : StepSchedule, optional
        Defaults to a constant step of 1.
    stop : StoppingRule, optional
        Defaults to the dual-space fixed-point residual with ``tol=1e-10``.
    max_iter : int
    x0 : array_like, optional
        Start of the governing sequence; see :func:`default_start`.
    objective_point : {"shadow", "governing"}
        Where the objective column is evaluated. ``shadow`` uses the natural
        output of the step (``J_B(z)`` for Douglas-Rachford, the averaged
        point for the nonsmooth cycle); ``governing`` uses ``z_{k+1}``.
    timing : bool
        Record wall-clock nanoseconds since the start.

    Returns
    -------
    SolverTrace

    Raises
    ------
    BsplitError
        Any step error, with the iteration number prepended.
    """
    if driver not in DRIVERS:
        raise ConstructionError(f"unknown driver {driver!r}; expected one of {sorted(DRIVERS)}")
    if objective_point not in ("shadow", "governing"):
        raise ConstructionError(f"unknown objective point {objective_point!r}")
    schedule = schedule or StepSchedule.constant(1.0)
    stop = stop or StoppingRule()
    if x0 is None:
        if problem.dim is None:
            raise ConstructionError("pass x0 or set problem.dim")
        x0 = default_start(kernel, problem.dim)
    z = as_vector(x0, "x0").copy()
    kernel.check_primal(z, interior=True, name="x0")
    if stop.kind == "objective_gap" and problem.optimal_value is None:
        raise MissingOptimum("objective-gap stopping needs problem.optimal_value")
    step = DRIVERS[driver]
    trace = SolverTrace(driver=driver, x0=z.copy())
    trace.meta.update(schedule=schedule.kind, gamma=schedule.gamma, tol=stop.tol)
    sum_g = sum_g2 = 0.0
    best = float("inf")
    t0 = time.perf_counter_ns()
    gz = kernel.grad(z)
    for k in range(1, max_iter + 1):
        gamma = schedule(k)
        try:
            zn, rec, shadow = step(kernel, problem, gamma, z)
        except BsplitError as exc:
            raise _annotate(exc, k)
        gzn = kernel.grad(zn)
        diff = gzn - gz
        if isinstance(kernel, SimplexEntropy):
            diff = diff - diff.mean()
        residual = float(np.max(np.abs(diff)))
        point = shadow if objective_point == "shadow" else zn
        obj = problem.objective(point)
        if obj < best:
            best = obj
        sum_g += gamma
        sum_g2 += gamma * gamma
        wall = time.perf_counter_ns() - t0 if timing else 0
        trace.append(
            TraceRecord(k, gamma, obj, residual, best if best < float("inf") else obj,
                        sum_g, sum_g2, wall),
            rec,
        )
        z, gz = zn, gzn
        if stop.kind == "dual_residual" and residual <= stop.tol:
            trace.converged = True
            break
        if stop.kind == "objective_gap" and obj - problem.optimal_value <= stop.tol:
            trace.converged = True
            break
    return trace


# ---------------------------------------------------------------------------
# certificates
# ---------------------------------------------------------------------------


@dataclass
class CertificateReport:
    """Outcome of a prefix-by-prefix rate check.

    Attributes
    ----------
    holds : bool
    first_failure : int or None
        Smallest prefix length ``N`` whose bound fails.
    checked : int
        Number of prefixes compared.
    worst_ratio : float
        Largest ``lhs / rhs`` over checked prefixes (at most 1 when the
        bound holds).
    constant : float
        ``5 G^2 / (2 sigma)`` for the alternating scheme, or the fitted
        coefficient for the Douglas-Rachford variant.
    fitted : bool
        True when ``constant`` was fitted rather than derived.
    lhs, rhs : ndarray
    """

    variant: str
    holds: bool
    first_failure: Optional[int]
    checked: int
    worst_ratio: float
    constant: float
    fitted: bool
    divergence_term: float
    optimal_value: float
    lhs: np.ndarray = field(repr=False)
    rhs: np.ndarray = field(repr=False)
    fit_window: int = 0


def certify_rate(
    trace,
    kernel,
    G,
    sigma=None,
    x_star_hint=None,
    optimal_value=None,
    objective=None,
    variant="bprs",
    fit_window=100,
    slack=1e-12,
):
    """Check a sublinear min-gap bound on every prefix of ``trace``.

    Alternating scheme (``variant="bprs"``)::

        min_{k<=N} F(z_k) - F* <= D(x*, w0) / (2 S1) + L S2 / S1,  L = 5 G^2 / (2 sigma)

    Douglas-Rachford (``variant="bdrs"``)::

        min_{k<=N} F(x_k) - F* <= D(x*, x0) / S1 + c S2 / S1

    where ``S1, S2`` are the running sums of ``gamma`` and ``gamma^2``. The
    coefficient ``c`` is not given in closed form; it is fitted as the
    smallest value making the first ``fit_window`` prefixes hold, and the
    bound is then required for every later prefix.

    Parameters
    ----------
    trace : SolverTrace
    kernel : LegendreKernel
    G : float
        Sup-norm bound on subgradients.
    sigma : float, optional
        Strong-convexity modulus; defaults to ``kernel.sigma``.
    x_star_hint : array_like, optional
        A minimizer. Needed for the divergence term unless the kernel is
        the simplex entropy, where ``-log min(w0)`` bounds it.
    optimal_value : float, optional
        ``F*``; computed as ``objective(x_star_hint)`` when omitted.
    objective : callable, optional

    Raises
    ------
    MissingOptimum
        If neither ``optimal_value`` nor ``x_star_hint`` is given.
    ConstructionError
        If the kernel has no strong-convexity modulus.
    """
    sigma = kernel.sigma if sigma is None else sigma
    if sigma is None or not sigma > 0:
        raise ConstructionError(f"{kernel!r} has no strong-convexity modulus; certificate refused")
    if variant not in ("bprs", "bdrs"):
        raise ConstructionError(f"unknown certificate variant {variant!r}")
    if optimal_value is None:
        if x_star_hint is None:
            raise MissingOptimum("certify_rate needs optimal_value or x_star_hint")
        if objective is None:
            raise MissingOptimum("an objective callable is needed to evaluate F(x*)")
        optimal_value = float(objective(as_vector(x_star_hint)))
    w0 = trace.x0
    if x_star_hint is not None:
        D0 = bregman_divergence(kernel, x_star_hint, w0)
    elif isinstance(kernel, SimplexEntropy):
        D0 = float(-np.log(np.min(w0)))
    else:
        raise MissingOptimum("the divergence term needs x_star_hint for this kernel")

    S1 = trace.column("sum_gamma")
    S2 = trace.column("sum_gamma_sq")
    lhs = trace.column("min_objective") - optimal_value
    n = len(lhs)
    if variant == "bprs":
        const = 5.0 * G * G / (2.0 * sigma)
        rhs = D0 / (2.0 * S1) + const * S2 / S1
        start, fitted, window = 0, False, 0
    else:
        window = min(fit_window, n)
        base = D0 / S1
        if window:
            need = (lhs[:window] - base[:window]) * S1[:window] / S2[:window]
            const = max(0.0, float(np.max(need)))
        else:
            const = 0.0
        rhs = base + const * S2 / S1
        start, fitted = window, True
    tol = slack * np.maximum(1.0, np.abs(rhs))
    ok = lhs[start:] <= rhs[start:] + tol[start:]
    bad = np.flatnonzero(~ok)
    first = int(start + bad[0] + 1) if bad.size else None
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(rhs[start:] > 0, lhs[start:] / rhs[start:], 0.0)
    worst = float(np.max(ratios)) if ratios.size else 0.0
    return CertificateReport(
        variant=variant,
        holds=first is None,
        first_failure=first,
        checked=int(n - start),
        worst_ratio=worst,
        constant=float(const),
        fitted=fitted,
        divergence_term=float(D0),
        optimal_value=float(optimal_value),
        lhs=lhs,
        rhs=rhs,
        fit_window=window,
    )
