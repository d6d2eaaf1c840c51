"""Legendre kernels, Bregman divergences, mirror maps and conjugates.

A kernel bundles a strictly convex function ``h`` with its gradient (the
mirror map), its convex conjugate ``h*`` and the gradient of ``h*`` (the
inverse mirror map). Every splitting method in the package is written in
terms of these four maps, so swapping the kernel swaps the geometry.

Five kernels are provided:

* :class:`Energy` -- ``h(x) = ||x||^2 / 2``.
* :class:`Quadratic` -- ``h(x) = x^T L x / 2`` for symmetric positive definite ``L``.
* :class:`BoltzmannShannon` -- ``h(x) = sum x (log x - 1)`` on the positive orthant.
* :class:`Burg` -- ``h(x) = -sum log x`` on the positive orthant.
* :class:`SimplexEntropy` -- the Boltzmann-Shannon entropy restricted to the
  probability simplex, whose conjugate is ``logsumexp(s) + 1``.
"""

import numpy as np
from scipy.linalg import cho_factor, cho_solve, eigvalsh
from scipy.special import logsumexp, rel_entr, softmax

from .errors import ConstructionError, DomainError, ShapeError

__all__ = [
    "LegendreKernel",
    "Energy",
    "Quadratic",
    "BoltzmannShannon",
    "Burg",
    "SimplexEntropy",
    "as_vector",
    "bregman_divergence",
    "mirror_forward",
    "mirror_backward",
    "conjugate_value",
    "kernel_from_name",
    "KERNEL_NAMES",
]

SIMPLEX_TOL = 1e-9


def as_vector(x, name="x"):
    """Return ``x`` as a float array, rejecting NaN and Inf entries."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    bad = ~np.isfinite(arr)
    if bad.any():
        idx = _first_index(bad)
        raise DomainError(f"{name}{list(idx)} is not finite", index=idx)
    return arr


def _first_index(mask):
    flat = int(np.flatnonzero(mask.ravel())[0])
    return tuple(int(i) for i in np.unravel_index(flat, mask.shape))


def _fmt_index(idx):
    return idx[0] if len(idx) == 1 else idx


def _require_same_shape(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")


class LegendreKernel:
    """Base class for the mirror-map bundle ``(h, grad h, h*, grad h*)``.

    Subclasses implement the raw maps; the module-level functions
    (:func:`mirror_forward` and friends) add domain and shape checks.

    Attributes
    ----------
    name : str
        Identifier accepted by :func:`kernel_from_name`.
    sigma : float or None
        Strong-convexity modulus over the reference domain. ``None`` means
        no global modulus exists and rate certificates refuse the kernel.
    entropic : bool
        True for kernels whose domain is (a subset of) the positive orthant.
    """

    name = "abstract"
    sigma = None
    entropic = False

    # -- domain predicates -------------------------------------------------
    def check_primal(self, x, interior=True, name="x"):
        """Raise :class:`DomainError` unless ``x`` lies in dom h.

        With ``interior=True`` the interior is required.
        """
        return x

    def check_dual(self, s, name="s"):
        """Raise :class:`DomainError` unless ``s`` lies in dom h*."""
        return s

    def in_domain(self, x, interior=True):
        try:
            self.check_primal(as_vector(x), interior=interior)
        except (DomainError, ShapeError):
            return False
        return True

    # -- raw maps (no validation) -----------------------------------------
    def value(self, x):
        raise NotImplementedError

    def grad(self, x):
        raise NotImplementedError

    def conj(self, s):
        raise NotImplementedError

    def grad_conj(self, s):
        raise NotImplementedError

    def hess(self, x):
        """Hessian of h at an interior point, as a dense matrix."""
        raise NotImplementedError

    def hess_conj(self, s):
        """Hessian of h* at a point of its domain, as a dense matrix."""
        raise NotImplementedError

    def divergence(self, x, y):
        return float(self.value(x) - self.value(y) - np.sum(self.grad(y) * (x - y)))

    def __repr__(self):
        return f"{type(self).__name__}()"


def _check_positive(x, name, interior):
    bad = ~(x > 0) if interior else ~(x >= 0)
    if bad.any():
        idx = _first_index(bad)
        rel = "strictly positive" if interior else "nonnegative"
        raise DomainError(
            f"{name}[{_fmt_index(idx)}] = {x[idx]!r} is not {rel}", index=_fmt_index(idx)
        )


class Energy(LegendreKernel):
    """Half squared Euclidean norm; every map is the identity or a norm."""

    name = "energy"
    sigma = 1.0

    def value(self, x):
        return 0.5 * float(np.sum(x * x))

    def grad(self, x):
        return np.array(x, dtype=float, copy=True)

    def conj(self, s):
        return 0.5 * float(np.sum(s * s))

    def grad_conj(self, s):
        return np.array(s, dtype=float, copy=True)

    def hess(self, x):
        return np.eye(x.size)

    def hess_conj(self, s):
        return np.eye(s.size)

    def divergence(self, x, y):
        d = x - y
        return 0.5 * float(np.sum(d * d))


class Quadratic(LegendreKernel):
    """``h(x) = x^T L x / 2`` with ``L`` symmetric positive definite.

    A Cholesky factor of ``L`` is computed once here so that each
    :func:`mirror_backward` call is a pair of triangular solves.

    Parameters
    ----------
    L : array_like, shape (n, n)

    Raises
    ------
    ConstructionError
        If ``L`` is not square, not symmetric or not positive definite.
    """

    name = "quadratic"

    def __init__(self, L):
        L = np.array(L, dtype=float)
        if L.ndim != 2 or L.shape[0] != L.shape[1]:
            raise ConstructionError(f"L must be square, got shape {L.shape}")
        if not np.all(np.isfinite(L)):
            raise ConstructionError("L has non-finite entries")
        scale = max(1.0, float(np.max(np.abs(L))))
        if np.max(np.abs(L - L.T)) > 1e-12 * scale:
            raise ConstructionError("L is not symmetric")
        try:
            self._factor = cho_factor(L, lower=True, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise ConstructionError(f"L is not positive definite: {exc}") from None
        self.L = L
        self.L.setflags(write=False)
        self.sigma = float(eigvalsh(L)[0])
        self.n = L.shape[0]

    def solve(self, s):
        """Return ``L^{-1} s`` using the stored factorization."""
        return cho_solve(self._factor, s, check_finite=False)

    def value(self, x):
        return 0.5 * float(x @ self.L @ x)

    def grad(self, x):
        return self.L @ x

    def conj(self, s):
        return 0.5 * float(s @ self.solve(s))

    def grad_conj(self, s):
        return self.solve(s)

    def hess(self, x):
        return self.L.copy()

    def hess_conj(self, s):
        return self.solve(np.eye(self.n))

    def divergence(self, x, y):
        d = x - y
        return 0.5 * float(d @ self.L @ d)

    def check_primal(self, x, interior=True, name="x"):
        if x.shape != (self.n,):
            raise ShapeError(f"{name} must have shape ({self.n},), got {x.shape}")
        return x

    def check_dual(self, s, name="s"):
        return self.check_primal(s, name=name)

    def __repr__(self):
        return f"Quadratic(n={self.n})"


class BoltzmannShannon(LegendreKernel):
    """Boltzmann-Shannon entropy ``sum x (log x - 1)``; divergence is KL."""

    name = "boltzmann"
    sigma = 1.0
    entropic = True

    def check_primal(self, x, interior=True, name="x"):
        _check_positive(x, name, interior)
        return x

    def value(self, x):
        return float(np.sum(rel_entr(x, 1.0) - x))

    def grad(self, x):
        return np.log(x)

    def conj(self, s):
        return float(np.sum(np.exp(s)))

    def grad_conj(self, s):
        return np.exp(s)

    def hess(self, x):
        return np.diag(1.0 / x)

    def hess_conj(self, s):
        return np.diag(np.exp(s))

    def divergence(self, x, y):
        return float(np.sum(rel_entr(x, y) - x + y))


class Burg(LegendreKernel):
    """Burg entropy ``-sum log x``; no global strong-convexity modulus."""

    name = "burg"
    sigma = None
    entropic = True

    def check_primal(self, x, interior=True, name="x"):
        _check_positive(x, name, True)
        return x

    def check_dual(self, s, name="s"):
        bad = ~(s < 0)
        if bad.any():
            idx = _first_index(bad)
            raise DomainError(
                f"{name}[{_fmt_index(idx)}] = {s[idx]!r} is not strictly negative "
                "(outside the domain of the Burg conjugate)",
                index=_fmt_index(idx),
            )
        return s

    def value(self, x):
        return -float(np.sum(np.log(x)))

    def grad(self, x):
        return -1.0 / x

    def conj(self, s):
        return -float(s.size) - float(np.sum(np.log(-s)))

    def grad_conj(self, s):
        return -1.0 / s

    def hess(self, x):
        return np.diag(1.0 / (x * x))

    def hess_conj(self, s):
        return np.diag(1.0 / (s * s))

    def divergence(self, x, y):
        q = x / y
        return float(np.sum(q - np.log(q) - 1.0))


class SimplexEntropy(LegendreKernel):
    """Entropy restricted to the probability simplex.

    The mirror map is ``log x``; its inverse is the softmax, so dual points
    are defined up to an additive constant. The conjugate over the simplex
    is ``logsumexp(s) + 1``.
    """

    name = "simplex"
    sigma = 1.0
    entropic = True

    def check_primal(self, x, interior=True, name="x"):
        _check_positive(x, name, interior)
        total = float(np.sum(x))
        if abs(total - 1.0) > SIMPLEX_TOL:
            raise DomainError(f"{name} sums to {total!r}, not 1", index=None)
        return x

    def value(self, x):
        return float(np.sum(rel_entr(x, 1.0) - x))

    def grad(self, x):
        return np.log(x)

    def conj(self, s):
        return float(logsumexp(s)) + 1.0

    def grad_conj(self, s):
        return softmax(s)

    def hess(self, x):
        raise NotImplementedError("the simplex kernel has no unconstrained Hessian")

    def hess_conj(self, s):
        p = softmax(s)
        return np.diag(p) - np.outer(p, p)

    def divergence(self, x, y):
        return float(np.sum(rel_entr(x, y) - x + y))


KERNEL_NAMES = ("energy", "quadratic", "boltzmann", "burg", "simplex")

_ALIASES = {
    "energy": Energy,
    "euclidean": Energy,
    "boltzmann": BoltzmannShannon,
    "boltzmann-shannon": BoltzmannShannon,
    "entropy": BoltzmannShannon,
    "kl": BoltzmannShannon,
    "burg": Burg,
    "simplex": SimplexEntropy,
    "simplex-entropy": SimplexEntropy,
}


def kernel_from_name(name, L=None):
    """Build a kernel from its name.

    Parameters
    ----------
    name : str
        One of ``energy``, ``quadratic``, ``boltzmann`` (alias ``entropy``,
        ``kl``), ``burg`` or ``simplex``.
    L : array_like, optional
        Matrix for the quadratic kernel.
    """
    key = name.strip().lower()
    if key == "quadratic":
        if L is None:
            raise ConstructionError("the quadratic kernel needs a matrix L")
        return Quadratic(L)
    try:
        return _ALIASES[key]()
    except KeyError:
        raise ConstructionError(
            f"unknown kernel {name!r}; expected one of {', '.join(KERNEL_NAMES)}"
        ) from None


def bregman_divergence(kernel, x, y):
    """Bregman divergence ``D_h(x, y) = h(x) - h(y) - <grad h(y), x - y>``.

    Parameters
    ----------
    kernel : LegendreKernel
    x : array_like
        Point of dom h (entropic kernels accept zero entries here).
    y : array_like
        Point of the interior of dom h.

    Returns
    -------
    float
        Nonnegative, and zero exactly when ``x == y``.

    Raises
    ------
    ShapeError
        If ``x`` and ``y`` differ in shape.
    DomainError
        If either point is outside the required domain.
    """
    x = as_vector(x, "x")
    y = as_vector(y, "y")
    _require_same_shape(x, y)
    kernel.check_primal(x, interior=False, name="x")
    kernel.check_primal(y, interior=True, name="y")
    return kernel.divergence(x, y)


def mirror_forward(kernel, x):
    """Mirror map ``grad h(x)`` for ``x`` in the interior of dom h."""
    x = as_vector(x, "x")
    kernel.check_primal(x, interior=True, name="x")
    return kernel.grad(x)


def mirror_backward(kernel, s):
    """Inverse mirror map ``grad h*(s)``; the inverse of :func:`mirror_forward`."""
    s = as_vector(s, "s")
    kernel.check_dual(s, name="s")
    return kernel.grad_conj(s)


def conjugate_value(kernel, s):
    """Conjugate ``h*(s)``."""
    s = as_vector(s, "s")
    kernel.check_dual(s, name="s")
    return kernel.conj(s)
