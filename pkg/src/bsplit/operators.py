"""Bregman forward, resolvent, reflection and Mann operators.

Given a kernel ``h`` and a maximal monotone operator ``T``:

* forward    ``F(x) = grad h*(grad h(x) - gamma T(x))``
* resolvent  ``J(z) = (grad h + gamma T)^{-1}(grad h(z))``
* reflection ``R(z) = grad h*(2 grad h(J(z)) - grad h(z))``
* Mann       ``M_alpha(z) = grad h*(alpha grad h(z) + (1 - alpha) grad h(T(z)))``

Resolvents are supplied by :class:`ProxOracle` objects. The module ships
closed-form oracles for the instances used across the package and a damped
Newton oracle for smooth operators with a known Jacobian.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq
from scipy.special import softmax

from .errors import CertificateError, ConstructionError, DomainError, NumericalError
from .legendre import (
    BoltzmannShannon,
    Energy,
    Quadratic,
    SimplexEntropy,
    as_vector,
)

__all__ = [
    "MonotoneMap",
    "ProxOracle",
    "forward_step",
    "resolvent_step",
    "reflection_step",
    "mann_step",
    "zero_map",
    "zero_oracle",
    "affine_map",
    "quadratic_oracle",
    "smooth_oracle",
    "sum_normalization_oracle",
    "kl_linear_oracle",
    "simplex_linear_oracle",
    "simplex_max_linear_oracle",
    "RESOLVENT_CERT_TOL",
]

RESOLVENT_CERT_TOL = 1e-8


@dataclass(frozen=True)
class MonotoneMap:
    """Single-valued evaluation of a monotone operator.

    Monotonicity is the caller's contract and is not checked.
    """

    eval: Callable[[np.ndarray], np.ndarray]
    name: str = "T"

    def __call__(self, x):
        return np.asarray(self.eval(x), dtype=float)


@dataclass(frozen=True)
class ProxOracle:
    """Solver for the Bregman resolvent of one operator.

    Attributes
    ----------
    solve : callable
        ``solve(kernel, gamma, z)`` returns ``J^h_{gamma T}(z)``.
    subgradient_at : callable, optional
        ``subgradient_at(x)`` returns an element of ``T(x)``. When present,
        :func:`resolvent_step` verifies the resolvent optimality condition.
    name : str
    """

    solve: Callable
    subgradient_at: Optional[Callable] = None
    name: str = "prox"


def _eval_map(T, x):
    return np.asarray(T(x), dtype=float)


def _to_primal(kernel, s):
    kernel.check_dual(s, name="dual point")
    return kernel.grad_conj(s)


def forward_step(kernel, T, gamma, x):
    """Bregman forward operator ``grad h*(grad h(x) - gamma T(x))``.

    Parameters
    ----------
    kernel : LegendreKernel
    T : MonotoneMap or callable
    gamma : float
        Positive step size.
    x : array_like
        Interior point of dom h.

    Raises
    ------
    DomainError
        If ``x`` is outside the interior of dom h or the dual point leaves
        the domain of ``grad h*`` (for example a positive component with the
        Burg kernel).
    """
    x = as_vector(x)
    kernel.check_primal(x, interior=True)
    s = kernel.grad(x) - gamma * _eval_map(T, x)
    return _to_primal(kernel, s)


def _dual_residual(kernel, z, x, t, gamma):
    gz = kernel.grad(z)
    r = gz - kernel.grad(x) - gamma * np.asarray(t, dtype=float)
    if isinstance(kernel, SimplexEntropy):
        # the simplex normal cone absorbs constant shifts
        r = r - r.mean()
        gz = gz - gz.mean()
    if not r.size:
        return 0.0
    # mirror points far from the origin carry proportionally larger rounding
    return float(np.max(np.abs(r))) / max(1.0, float(np.max(np.abs(gz))))


def resolvent_step(kernel, oracle, gamma, z):
    """Bregman resolvent ``J^h_{gamma T}(z)`` computed by ``oracle``.

    When the oracle exposes ``subgradient_at``, the returned point ``x`` is
    certified: ``||grad h(z) - grad h(x) - gamma t||_inf <= 1e-8 max(1, ||grad h(z)||_inf)``
    for the reported ``t`` in ``T(x)``.

    Raises
    ------
    CertificateError
        If the optimality condition fails, which signals a wrong oracle.
    """
    if gamma <= 0:
        raise DomainError(f"step size must be positive, got {gamma!r}")
    z = as_vector(z, "z")
    kernel.check_primal(z, interior=True, name="z")
    x = as_vector(oracle.solve(kernel, gamma, z), "resolvent output")
    kernel.check_primal(x, interior=True, name="resolvent output")
    if oracle.subgradient_at is not None:
        err = _dual_residual(kernel, z, x, oracle.subgradient_at(x), gamma)
        if not err <= RESOLVENT_CERT_TOL:
            raise CertificateError(
                f"oracle {oracle.name!r} violates its optimality condition "
                f"by {err:.3e} (tolerance {RESOLVENT_CERT_TOL:g})"
            )
    return x


def reflection_step(kernel, oracle, gamma, z):
    """Bregman reflection ``grad h*(2 grad h(J(z)) - grad h(z))``."""
    z = as_vector(z, "z")
    x = resolvent_step(kernel, oracle, gamma, z)
    s = 2.0 * kernel.grad(x) - kernel.grad(z)
    return _to_primal(kernel, s)


def mann_step(kernel, T_point, alpha, z):
    """Bregman Mann combination of ``z`` and an already evaluated ``T(z)``.

    Returns ``grad h*(alpha grad h(z) + (1 - alpha) grad h(T_point))``. The
    endpoints ``alpha = 1`` and ``alpha = 0`` return ``z`` and ``T_point``
    without a round trip through the mirror maps.
    """
    if not 0.0 <= alpha <= 1.0:
        raise DomainError(f"alpha must lie in [0, 1], got {alpha!r}")
    z = as_vector(z, "z")
    T_point = as_vector(T_point, "T_point")
    kernel.check_primal(z, interior=True, name="z")
    kernel.check_primal(T_point, interior=True, name="T_point")
    if alpha == 1.0:
        return z.copy()
    if alpha == 0.0:
        return T_point.copy()
    s = alpha * kernel.grad(z) + (1.0 - alpha) * kernel.grad(T_point)
    return _to_primal(kernel, s)


# ---------------------------------------------------------------------------
# Stock maps and oracles
# ---------------------------------------------------------------------------


def zero_map():
    """The zero operator."""
    return MonotoneMap(lambda x: np.zeros_like(np.asarray(x, dtype=float)), name="zero")


def zero_oracle():
    """Resolvent of the zero operator (the identity)."""
    return ProxOracle(
        solve=lambda kernel, gamma, z: np.array(z, dtype=float, copy=True),
        subgradient_at=lambda x: np.zeros_like(x),
        name="zero",
    )


def affine_map(P, q):
    """The affine monotone map ``x -> P x + q`` (``P`` positive semidefinite)."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    q = np.atleast_1d(np.asarray(q, dtype=float))
    return MonotoneMap(lambda x: P @ x + q, name="affine")


def quadratic_oracle(P, q, certify=True):
    """Resolvent of ``T = grad(x^T P x / 2 + q^T x)`` for symmetric PSD ``P``.

    Energy and quadratic kernels are handled by one linear solve; other
    kernels fall back to :func:`smooth_oracle`.
    """
    P = np.atleast_2d(np.asarray(P, dtype=float))
    q = np.atleast_1d(np.asarray(q, dtype=float))
    newton = smooth_oracle(lambda x: P @ x + q, lambda x: P, certify=False)

    def solve(kernel, gamma, z):
        if isinstance(kernel, Energy):
            return np.linalg.solve(np.eye(z.size) + gamma * P, z - gamma * q)
        if isinstance(kernel, Quadratic):
            return np.linalg.solve(kernel.L + gamma * P, kernel.L @ z - gamma * q)
        return newton.solve(kernel, gamma, z)

    sub = (lambda x: P @ x + q) if certify else None
    return ProxOracle(solve=solve, subgradient_at=sub, name="quadratic")


def _newton_resolvent(kernel, gamma, z, grad, hess, tol=1e-14, max_iter=100):
    target = kernel.grad(z)
    x = z.copy()

    def residual(y):
        return kernel.grad(y) + gamma * grad(y) - target

    r = residual(x)
    scale = 1.0 + float(np.max(np.abs(target)))
    for _ in range(max_iter):
        rnorm = float(np.max(np.abs(r)))
        if rnorm <= tol * scale:
            return x
        J = kernel.hess(x) + gamma * np.atleast_2d(hess(x))
        d = np.linalg.solve(J, -r)
        t = 1.0
        accepted = False
        while t > 1e-12:
            cand = x + t * d
            if kernel.in_domain(cand):
                rc = residual(cand)
                if float(np.max(np.abs(rc))) < rnorm or t == 1.0 and rnorm < 1e-8 * scale:
                    x, r, accepted = cand, rc, True
                    break
            t *= 0.5
        if not accepted:
            break
    if float(np.max(np.abs(r))) <= 1e-10 * scale:
        return x
    raise NumericalError(
        f"Newton resolvent did not converge (residual {float(np.max(np.abs(r))):.3e})"
    )


def smooth_oracle(grad, hess, certify=True, name="smooth"):
    """Resolvent of a smooth monotone map by damped Newton iterations.

    Solves ``grad h(x) + gamma grad(x) = grad h(z)`` with steps shortened to
    stay inside dom h and to decrease the residual.

    Parameters
    ----------
    grad : callable
        The operator ``x -> T(x)``.
    hess : callable
        Its Jacobian ``x -> DT(x)``.
    """

    def solve(kernel, gamma, z):
        return _newton_resolvent(kernel, gamma, z, grad, hess)

    return ProxOracle(solve=solve, subgradient_at=grad if certify else None, name=name)


def sum_normalization_oracle(total=1.0):
    """Resolvent of the normal cone of ``{x : sum x = total}``.

    With entropic kernels this is plain normalization; with the energy
    kernel it is the Euclidean projection onto the hyperplane.
    """

    def solve(kernel, gamma, z):
        if isinstance(kernel, (BoltzmannShannon, SimplexEntropy)):
            return z * (total / np.sum(z))
        if isinstance(kernel, Energy):
            return z + (total - np.sum(z)) / z.size
        raise ConstructionError(f"no closed-form hyperplane projection for {kernel!r}")

    return ProxOracle(solve=solve, name="sum-normalization")


def kl_linear_oracle(alpha, p, c, certify=True):
    """Resolvent of ``grad(alpha KL(x, p) + <c, x>)`` under the Boltzmann kernel.

    ``alpha`` may be a scalar or a vector of per-coordinate weights.

    Closed form: ``log x = (log z + gamma alpha log p - gamma c) / (1 + gamma alpha)``.
    """
    p = np.asarray(p, dtype=float)
    c = np.asarray(c, dtype=float)
    logp = np.log(p)

    def grad(x):
        return alpha * (np.log(x) - logp) + c

    def solve(kernel, gamma, z):
        if not isinstance(kernel, BoltzmannShannon):
            raise ConstructionError("kl_linear_oracle needs the Boltzmann-Shannon kernel")
        return np.exp((np.log(z) + gamma * alpha * logp - gamma * c) / (1.0 + gamma * alpha))

    return ProxOracle(solve=solve, subgradient_at=grad if certify else None, name="kl-linear")


def simplex_linear_oracle(c, certify=True):
    """Resolvent of ``c + N_simplex`` (a linear function on the simplex).

    Under the simplex kernel this is ``softmax(log z - gamma c)``.
    """
    c = np.asarray(c, dtype=float)

    def solve(kernel, gamma, z):
        if not isinstance(kernel, (SimplexEntropy, BoltzmannShannon)):
            raise ConstructionError("simplex_linear_oracle needs an entropic kernel")
        return softmax(np.log(z) - gamma * c)

    return ProxOracle(
        solve=solve, subgradient_at=(lambda x: c) if certify else None, name="simplex-linear"
    )


def simplex_max_linear_oracle(a1, a2):
    """Resolvent of ``max(<a1, x>, <a2, x>)`` restricted to the simplex.

    The primal problem ``min_x max(<a1,x>,<a2,x>) + KL(x, z) / gamma`` is
    solved through its one-dimensional concave dual in the mixing weight
    ``theta`` of ``theta a1 + (1 - theta) a2``, whose derivative is found by
    bracketing root search; the primal point is then a softmax.
    """
    a1 = np.asarray(a1, dtype=float)
    a2 = np.asarray(a2, dtype=float)

    def solve(kernel, gamma, z):
        if not isinstance(kernel, (SimplexEntropy, BoltzmannShannon)):
            raise ConstructionError("simplex_max_linear_oracle needs an entropic kernel")
        logz = np.log(z)
        d = a1 - a2

        def weights(theta):
            s = logz - gamma * (a2 + theta * d)
            e = np.exp(s - s.max())
            return e / e.sum()

        def slope(theta):
            # derivative of the convex dual logsumexp(logz - gamma a_theta) / gamma
            return -float(weights(theta) @ d)

        if slope(0.0) >= 0.0:
            theta = 0.0
        elif slope(1.0) <= 0.0:
            theta = 1.0
        else:
            theta = brentq(slope, 0.0, 1.0, xtol=1e-15, rtol=4 * np.finfo(float).eps)
        return weights(theta)

    return ProxOracle(solve=solve, name="simplex-max-linear")
