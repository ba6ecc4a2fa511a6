"""Numerical kernels shared by every other module.

Quadrature, bracketed root finding, a handful of special functions and the
seeded random stream used to drive simulations. All functions are pure.

Integrals over unbounded ranges are mapped onto (0, 1) by a rational
substitution before quadrature, so that a single Gauss-Legendre path serves
all of them (see :func:`integrate_halfline`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import optimize, special

from .errors import BracketError, ConfigurationError, ConvergenceError, DomainError

DEFAULT_QUAD_ORDER = 64
MAX_BRENT_ITER = 200


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Legendre nodes and weights on an interval ``(a, b)``."""

    nodes: np.ndarray
    weights: np.ndarray
    order: int

    def integrate(self, f) -> float:
        return float(np.dot(self.weights, f(self.nodes)))


@lru_cache(maxsize=64)
def _leggauss(order: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(order)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gauss_legendre(order: int, a: float = 0.0, b: float = 1.0) -> QuadratureRule:
    """Gauss-Legendre rule of ``order`` nodes on ``(a, b)``.

    Exact for polynomials of degree ``2 * order - 1``.
    """
    if int(order) != order or order < 1:
        raise ConfigurationError(f"quadrature order must be a positive integer, got {order!r}")
    if not (np.isfinite(a) and np.isfinite(b)) or not a < b:
        raise ConfigurationError(f"invalid quadrature interval ({a}, {b})")
    x, w = _leggauss(int(order))
    half = 0.5 * (b - a)
    return QuadratureRule(nodes=a + half * (x + 1.0), weights=half * w, order=int(order))


@lru_cache(maxsize=16)
def unit_square_rule(order: int = DEFAULT_QUAD_ORDER) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Tensor Gauss-Legendre grid on ``(0, 1)^2``: ``(u1, u2, weights)`` as 2-D arrays."""
    r = gauss_legendre(order)
    u1, u2 = np.meshgrid(r.nodes, r.nodes, indexing="ij")
    w = np.outer(r.weights, r.weights)
    for arr in (u1, u2, w):
        arr.setflags(write=False)
    return u1, u2, w


@lru_cache(maxsize=16)
def graded_rule(order: int = 12, levels: int = 30) -> QuadratureRule:
    """Composite Gauss-Legendre on (0, 1) with dyadic panels refined toward
    both endpoints.

    Panels are ``[0, 2^-levels], ..., [1/4, 1/2]`` and their mirror images.
    Suited to integrands with integrable endpoint singularities, such as
    copula densities with tail dependence.
    """
    if levels < 1:
        raise ConfigurationError("levels must be >= 1")
    left = [0.0] + [2.0**-k for k in range(levels, 0, -1)]
    edges = left + [1.0 - e for e in reversed(left[:-1])]
    nodes, weights = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        r = gauss_legendre(order, a, b)
        nodes.append(r.nodes)
        weights.append(r.weights)
    x, w = np.concatenate(nodes), np.concatenate(weights)
    x.setflags(write=False)
    w.setflags(write=False)
    return QuadratureRule(nodes=x, weights=w, order=int(order))


def integrate_halfline(f, order: int = DEFAULT_QUAD_ORDER) -> float:
    """Integrate ``f`` over ``(0, inf)`` through ``x = s / (1 - s)``."""
    r = gauss_legendre(order)
    s = r.nodes
    x = s / (1.0 - s)
    return float(np.dot(r.weights, f(x) / (1.0 - s) ** 2))


def brent_root(f, lo: float, hi: float, tol: float = 1e-12) -> float:
    """Root of a function that changes sign on ``[lo, hi]`` (Brent's method).

    Raises
    ------
    BracketError
        ``f(lo)`` and ``f(hi)`` have the same strict sign.
    ConvergenceError
        More than 200 iterations were needed.
    """
    if tol <= 0:
        raise ConfigurationError("tol must be positive")
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return float(lo)
    if fhi == 0.0:
        return float(hi)
    if not (np.isfinite(flo) and np.isfinite(fhi)) or flo * fhi > 0:
        raise BracketError(f"no sign change on [{lo}, {hi}]: f(lo)={flo}, f(hi)={fhi}")
    try:
        root, info = optimize.brentq(
            f, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps, maxiter=MAX_BRENT_ITER,
            full_output=True, disp=False,
        )
    except RuntimeError as exc:  # pragma: no cover - brentq raises only with disp=True
        raise ConvergenceError(str(exc)) from exc
    if not info.converged:
        raise ConvergenceError(f"brent_root did not converge in {MAX_BRENT_ITER} iterations")
    return float(root)


# --- Student t -------------------------------------------------------------


def _check_df(nu) -> None:
    if np.any(np.asarray(nu) <= 0) or np.any(np.isnan(nu)):
        raise DomainError(f"degrees of freedom must be positive, got {nu}")


def student_t_cdf(x, nu):
    """Student-t CDF through the regularized incomplete beta function.

    ``P(T <= x) = I_{nu/(nu+x^2)}(nu/2, 1/2) / 2`` for ``x <= 0`` and its
    reflection for ``x > 0``.
    """
    _check_df(nu)
    x = np.asarray(x, dtype=float)
    nu = np.asarray(nu, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        tail = 0.5 * special.betainc(0.5 * nu, 0.5, nu / (nu + x * x))
    out = np.where(x <= 0, tail, 1.0 - tail)
    out = np.where(np.isneginf(x), 0.0, np.where(np.isposinf(x), 1.0, out))
    return out[()] if out.ndim == 0 else out


def student_t_quantile(p, nu):
    """Inverse of :func:`student_t_cdf`.

    scipy's ``stdtrit`` supplies the starting point; two Newton steps on the
    lower-tail CDF then bring it to full precision. Upper-half probabilities
    use the reflection ``Q(p) = -Q(1 - p)``, where ``1 - p`` is exact.
    """
    _check_df(nu)
    p = np.asarray(p, dtype=float)
    if np.any((p < 0) | (p > 1)):
        raise DomainError("probability outside [0, 1]")
    nu = np.asarray(nu, dtype=float)
    upper = p > 0.5
    lo = np.where(upper, 1.0 - p, p)
    x = special.stdtrit(nu, lo)
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        for _ in range(2):
            step = (0.5 * special.betainc(0.5 * nu, 0.5, nu / (nu + x * x)) - lo) / student_t_pdf(x, nu)
            x = np.where(np.isfinite(step) & (x < 0), x - step, x)
    out = np.where(upper, -x, x)
    return out[()] if np.ndim(out) == 0 else out


def student_t_logpdf(x, nu):
    _check_df(nu)
    x = np.asarray(x, dtype=float)
    return (
        special.gammaln(0.5 * (nu + 1.0)) - special.gammaln(0.5 * nu)
        - 0.5 * np.log(nu * np.pi) - 0.5 * (nu + 1.0) * np.log1p(x * x / nu)
    )


def student_t_pdf(x, nu):
    return np.exp(student_t_logpdf(x, nu))


# --- assorted special functions -------------------------------------------


def _li2_series(z: float) -> float:
    total, term, k = 0.0, z, 1
    while True:
        inc = term / (k * k)
        total += inc
        if abs(inc) < 1e-17 * max(abs(total), 1e-300):
            return total
        k += 1
        term *= z
        if k > 200:  # |z| <= 1/2 converges long before this
            return total


def polylog2(z: float) -> float:
    """Dilogarithm ``Li_2(z) = sum_k z^k / k^2`` for real ``|z| <= 1``.

    Series for ``|z| <= 1/2``; the reflection ``Li2(z) + Li2(1-z) = pi^2/6 -
    ln z ln(1-z)`` on ``(1/2, 1]``; and the duplication formula
    ``Li2(z) = Li2(z^2)/2 - Li2(-z)`` on ``[-1, -1/2)``.
    """
    z = float(z)
    if not abs(z) <= 1.0:
        raise DomainError(f"polylog2 defined here for |z| <= 1, got {z}")
    if z == 1.0:
        return math.pi**2 / 6.0
    if abs(z) <= 0.5:
        return _li2_series(z)
    if z > 0.5:
        return math.pi**2 / 6.0 - math.log(z) * math.log1p(-z) - _li2_series(1.0 - z)
    return 0.5 * polylog2(z * z) - polylog2(-z)


def beta_fn(a: float, b: float) -> float:
    """Euler beta function ``Gamma(a) Gamma(b) / Gamma(a + b)``."""
    if not (a > 0 and b > 0):
        raise DomainError(f"beta function needs positive arguments, got ({a}, {b})")
    return float(special.beta(a, b))


def norm_cdf(x):
    return special.ndtr(x)


def norm_ppf(p):
    return special.ndtri(p)


# --- random streams ---------------------------------------------------------


@dataclass(frozen=True)
class RngStream:
    """Reproducible uniform stream keyed by ``(seed, stream_id)``.

    Distinct ``stream_id`` values are spawned children of the same
    :class:`numpy.random.SeedSequence`, hence statistically independent.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigurationError("seed must be a 64-bit nonnegative integer")
        if int(self.stream_id) < 0:
            raise ConfigurationError("stream_id must be nonnegative")

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream_id),))
        return np.random.Generator(np.random.PCG64(ss))

    def uniforms(self, size: int) -> np.ndarray:
        """``size`` draws strictly inside (0, 1) on a 2^-52 lattice."""
        k = self.generator().integers(0, 2**52, size=size, dtype=np.int64)
        return (k.astype(float) + 0.5) / 2.0**52
