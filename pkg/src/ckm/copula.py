"""Bivariate one-parameter (and Student-t) copula families.

Six families are supported (Clayton, Gumbel, Frank, Gaussian, EFGM, Student-t)
together with their survival (180-degree rotated) versions. For every family
the module provides the CDF, the log-density with first and second
derivatives, the conditional CDF ``h(w | u) = dC(u, w)/du`` and its inverse,
Kendall's tau, Spearman's rho and the tail-dependence coefficients.

Each family writes its log-density once, in terms of numpy/scipy ufuncs, so
the same code path evaluates plain arrays and :class:`~ckm.jet.Jet` objects.
Derivatives therefore come from forward-mode differentiation rather than
hand-derived expressions.

Parameter conventions
---------------------
clayton   ``alpha >= 0``        (0 is the independence limit)
gumbel    ``alpha >= 1``        (1 is independence)
frank     ``alpha`` real        (0 is independence)
gaussian  ``|rho| < 1``
efgm      ``|alpha| <= 1``
studentt  ``(rho, nu)`` with ``|rho| < 1`` and ``nu >= 2``
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy import integrate, special

from . import jet as _jet
from .errors import ConvergenceError, DomainError, UnsupportedError
from .numerics import (
    DEFAULT_QUAD_ORDER,
    brent_root,
    gauss_legendre,
    polylog2,
    unit_square_rule,
)

FAMILIES = ("clayton", "gumbel", "frank", "gaussian", "efgm", "studentt")

_ALIASES = {
    "clayton": "clayton",
    "gumbel": "gumbel",
    "frank": "frank",
    "gaussian": "gaussian",
    "normal": "gaussian",
    "efgm": "efgm",
    "fgm": "efgm",
    "studentt": "studentt",
    "student-t": "studentt",
    "student_t": "studentt",
    "t": "studentt",
}

NU_FIT_BOUNDS = (2.01, 50.0)
_T_CDF_ORDER = 96


def canonical_family(name: str) -> str:
    key = str(name).strip().lower()
    if key not in _ALIASES:
        raise DomainError(f"unknown copula family {name!r}; choose from {', '.join(FAMILIES)}")
    return _ALIASES[key]


# ---------------------------------------------------------------------------
# Family implementations. Methods take ``theta`` as a tuple whose entries may
# be floats or jets (for ``logpdf``) and arrays ``u1``, ``u2`` of the same
# shape. ``h`` is the conditional CDF of the second argument given the first.
# ---------------------------------------------------------------------------


class _Family:
    name = ""
    nparams = 1
    param_names: tuple[str, ...] = ("alpha",)

    def check(self, theta) -> None:
        raise NotImplementedError

    def is_independence(self, theta) -> bool:
        return False

    def logpdf(self, theta, u1, u2):
        raise NotImplementedError

    def cdf(self, theta, u1, u2):
        raise NotImplementedError

    def h(self, theta, w, u):
        raise NotImplementedError

    def hinv(self, theta, q, u):
        raise NotImplementedError

    def tau(self, theta) -> float:
        raise NotImplementedError

    def tails(self, theta) -> tuple[float, float]:
        return 0.0, 0.0

    def spearman(self, theta) -> float | None:
        return None

    def to_free(self, theta) -> np.ndarray:
        raise NotImplementedError

    def from_free(self, x) -> tuple[float, ...]:
        raise NotImplementedError

    def free_jacobian(self, x) -> np.ndarray:
        """Diagonal of d theta / d x."""
        raise NotImplementedError

    def from_tau(self, tau: float) -> tuple[float, ...]:
        raise NotImplementedError


class _Clayton(_Family):
    name = "clayton"

    def check(self, theta):
        (a,) = theta
        if not (np.isfinite(a) and a >= 0):
            raise DomainError(f"Clayton alpha must be >= 0, got {a}")

    def is_independence(self, theta):
        return theta[0] == 0.0

    def logpdf(self, theta, u1, u2):
        (a,) = theta
        l1, l2 = np.log(u1), np.log(u2)
        s = np.expm1(-a * l1) + np.expm1(-a * l2)
        return np.log1p(a) - (1.0 + a) * (l1 + l2) - (2.0 + 1.0 / a) * np.log1p(s)

    def cdf(self, theta, u1, u2):
        (a,) = theta
        with np.errstate(divide="ignore"):
            s = np.expm1(-a * np.log(u1)) + np.expm1(-a * np.log(u2))
            return np.exp(-np.log1p(s) / a)

    def h(self, theta, w, u):
        (a,) = theta
        lu = np.log(u)
        with np.errstate(divide="ignore", over="ignore"):
            s = np.expm1(-a * lu) + np.expm1(-a * np.log(w))
            return np.exp((-1.0 - 1.0 / a) * np.log1p(s) - (1.0 + a) * lu)

    def hinv(self, theta, q, u):
        (a,) = theta
        with np.errstate(divide="ignore", over="ignore"):
            t = np.expm1(-a / (1.0 + a) * np.log(q)) * np.exp(-a * np.log(u))
            return np.exp(-np.log1p(t) / a)

    def tau(self, theta):
        (a,) = theta
        return a / (a + 2.0)

    def tails(self, theta):
        (a,) = theta
        return (2.0 ** (-1.0 / a) if a > 0 else 0.0), 0.0

    def to_free(self, theta):
        return np.array([math.log(theta[0])])

    def from_free(self, x):
        return (float(np.exp(x[0])),)

    def free_jacobian(self, x):
        return np.array([np.exp(x[0])])

    def from_tau(self, tau):
        tau = min(max(tau, 0.02), 0.95)
        return (2.0 * tau / (1.0 - tau),)


class _Gumbel(_Family):
    name = "gumbel"

    def check(self, theta):
        (a,) = theta
        if not (np.isfinite(a) and a >= 1):
            raise DomainError(f"Gumbel alpha must be >= 1, got {a}")

    def is_independence(self, theta):
        return theta[0] == 1.0

    def logpdf(self, theta, u1, u2):
        (a,) = theta
        x1, x2 = -np.log(u1), -np.log(u2)
        lx1, lx2 = np.log(x1), np.log(x2)
        ln_a = np.logaddexp(a * lx1, a * lx2)
        z = np.exp(ln_a / a)
        return (
            -z + x1 + x2 + (a - 1.0) * (lx1 + lx2) + (1.0 / a - 2.0) * ln_a
            + np.log(z + a - 1.0)
        )

    def cdf(self, theta, u1, u2):
        (a,) = theta
        with np.errstate(divide="ignore"):
            x1, x2 = -np.log(u1), -np.log(u2)
            return np.exp(-((x1**a + x2**a) ** (1.0 / a)))

    def h(self, theta, w, u):
        (a,) = theta
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            x, y = -np.log(u), -np.log(w)
            ln_a = np.logaddexp(a * np.log(x), a * np.log(y))
            z = np.exp(ln_a / a)
            out = np.exp(-z + (1.0 / a - 1.0) * ln_a + (a - 1.0) * np.log(x) + x)
        out = np.where(w <= 0, 0.0, np.where(w >= 1, 1.0, out))
        return out

    def hinv(self, theta, q, u):
        (a,) = theta
        q, u = np.broadcast_arrays(np.asarray(q, float), np.asarray(u, float))
        beta = a - 1.0
        x = -np.log(u)
        c = x + beta * np.log(x) - np.log(q)
        # Newton on phi(z) = z + beta ln z = c. phi is concave and increasing
        # with phi(x) <= c, so iterates from z = x increase monotonically.
        z = x.copy()
        for _ in range(100):
            step = (c - z - beta * np.log(z)) / (1.0 + beta / z)
            z = z + step
            if np.all(np.abs(step) <= 1e-15 * np.maximum(z, 1.0)):
                break
        else:
            bad = np.abs(c - z - beta * np.log(z)) > 1e-10 * np.maximum(z, 1.0)
            for idx in zip(*np.nonzero(bad)):
                xi, ci = float(x[idx]), float(c[idx])
                hi = max(2.0 * ci, xi + 1.0)
                z[idx] = brent_root(lambda t: t + beta * math.log(t) - ci, xi, hi, tol=1e-14)
        y = z * (-np.expm1(a * (np.log(x) - np.log(z)))) ** (1.0 / a)
        return np.exp(-y)

    def tau(self, theta):
        return 1.0 - 1.0 / theta[0]

    def tails(self, theta):
        return 0.0, 2.0 - 2.0 ** (1.0 / theta[0])

    def to_free(self, theta):
        return np.array([math.log(theta[0] - 1.0)])

    def from_free(self, x):
        return (1.0 + float(np.exp(x[0])),)

    def free_jacobian(self, x):
        return np.array([np.exp(x[0])])

    def from_tau(self, tau):
        tau = min(max(tau, 0.02), 0.95)
        return (1.0 / (1.0 - tau),)


def _debye1(a: float) -> float:
    """Debye function ``D_1(a) = (1/a) int_0^a t / (e^t - 1) dt``."""
    if a == 0:
        return 1.0
    r = gauss_legendre(DEFAULT_QUAD_ORDER, min(0.0, a), max(0.0, a))
    t = r.nodes
    val = float(np.dot(r.weights, t / np.expm1(t)))
    return val / abs(a)


class _Frank(_Family):
    name = "frank"

    def check(self, theta):
        (a,) = theta
        if not np.isfinite(a) or abs(a) > 700:
            raise DomainError(f"Frank alpha must be finite with |alpha| <= 700, got {a}")

    def is_independence(self, theta):
        return theta[0] == 0.0

    def logpdf(self, theta, u1, u2):
        (a,) = theta
        sgn = float(np.sign(_jet.value(a)))
        e = -np.expm1(-a)
        p = -np.expm1(-a * u1)
        q = -np.expm1(-a * u2)
        return np.log(a * e) - a * (u1 + u2) - 2.0 * np.log(sgn * (e - p * q))

    def cdf(self, theta, u1, u2):
        (a,) = theta
        return -np.log1p(np.expm1(-a * u1) * np.expm1(-a * u2) / np.expm1(-a)) / a

    def h(self, theta, w, u):
        # both denominator terms share the sign of a, so nothing cancels
        (a,) = theta
        if a == 0:
            return np.broadcast_arrays(np.asarray(w, float), np.asarray(u, float))[0] * 1.0
        ew = np.expm1(a * w)
        return ew / (ew - np.exp(a * u) * np.expm1(a * (w - 1.0)))

    def hinv(self, theta, q, u):
        (a,) = theta
        q = np.asarray(q, dtype=float)
        if abs(a) <= 1.0:
            return -np.log1p(q * np.expm1(-a) / (q + (1.0 - q) * np.exp(-a * u))) / a
        # log form avoids log1p of a value near -1 for strong dependence
        with np.errstate(divide="ignore"):
            lq, lp = np.log(q), np.log1p(-q)
        num = np.logaddexp(lp - a * u, lq - a)
        den = np.logaddexp(lq, lp - a * u)
        return -(num - den) / a

    def tau(self, theta):
        (a,) = theta
        if a == 0:
            return 0.0
        return 1.0 - 4.0 / a + 4.0 * _debye1(a) / a

    def spearman(self, theta):
        return None

    def to_free(self, theta):
        return np.array([float(theta[0])])

    def from_free(self, x):
        return (float(x[0]),)

    def free_jacobian(self, x):
        return np.ones(1)

    def from_tau(self, tau):
        tau = min(max(tau, -0.95), 0.95)
        if abs(tau) < 1e-6:
            return (0.0,)
        lo, hi = (1e-8, 200.0) if tau > 0 else (-200.0, -1e-8)
        return (brent_root(lambda a: self.tau((a,)) - tau, lo, hi, tol=1e-10),)


def _bvn_cdf(h, k, rho):
    """Bivariate standard normal CDF through Owen's T function."""
    h, k = np.broadcast_arrays(np.asarray(h, float), np.asarray(k, float))
    s = math.sqrt(1.0 - rho * rho)
    with np.errstate(divide="ignore", invalid="ignore"):
        ah = (k - rho * h) / (h * s)
        ak = (h - rho * k) / (k * s)
        out = (
            0.5 * (special.ndtr(h) + special.ndtr(k))
            - special.owens_t(h, ah) - special.owens_t(k, ak)
        )
    beta = np.where((h * k < 0) | ((h * k == 0) & (h + k < 0)), 0.5, 0.0)
    out = out - beta
    both0 = (h == 0) & (k == 0)
    out = np.where(both0, 0.25 + math.asin(rho) / (2 * math.pi), out)
    out = np.where(np.isneginf(h) | np.isneginf(k), 0.0, out)
    out = np.where(np.isposinf(h), special.ndtr(k), out)
    out = np.where(np.isposinf(k), special.ndtr(h), out)
    return np.clip(out, 0.0, 1.0)


class _Gaussian(_Family):
    name = "gaussian"
    param_names = ("rho",)

    def check(self, theta):
        (r,) = theta
        if not (np.isfinite(r) and abs(r) < 1):
            raise DomainError(f"Gaussian rho must satisfy |rho| < 1, got {r}")

    def is_independence(self, theta):
        return theta[0] == 0.0

    def logpdf(self, theta, u1, u2):
        (r,) = theta
        x1, x2 = special.ndtri(u1), special.ndtri(u2)
        one_m = 1.0 - r * r
        quad = r * r * (x1 * x1 + x2 * x2) - 2.0 * r * x1 * x2
        return -0.5 * np.log(one_m) - quad / (2.0 * one_m)

    def cdf(self, theta, u1, u2):
        return _bvn_cdf(special.ndtri(u1), special.ndtri(u2), theta[0])

    def h(self, theta, w, u):
        (r,) = theta
        with np.errstate(divide="ignore", invalid="ignore"):
            z = (special.ndtri(w) - r * special.ndtri(u)) / math.sqrt(1.0 - r * r)
        return special.ndtr(z)

    def hinv(self, theta, q, u):
        (r,) = theta
        return special.ndtr(math.sqrt(1.0 - r * r) * special.ndtri(q) + r * special.ndtri(u))

    def tau(self, theta):
        return 2.0 / math.pi * math.asin(theta[0])

    def spearman(self, theta):
        return 6.0 / math.pi * math.asin(theta[0] / 2.0)

    def to_free(self, theta):
        return np.array([math.atanh(theta[0])])

    def from_free(self, x):
        return (float(np.tanh(x[0])),)

    def free_jacobian(self, x):
        return np.array([1.0 - np.tanh(x[0]) ** 2])

    def from_tau(self, tau):
        return (math.sin(math.pi * min(max(tau, -0.95), 0.95) / 2.0),)


class _EFGM(_Family):
    name = "efgm"

    def check(self, theta):
        (a,) = theta
        if not (np.isfinite(a) and abs(a) <= 1):
            raise DomainError(f"EFGM alpha must lie in [-1, 1], got {a}")

    def is_independence(self, theta):
        return theta[0] == 0.0

    def logpdf(self, theta, u1, u2):
        (a,) = theta
        return np.log1p(a * (1.0 - 2.0 * u1) * (1.0 - 2.0 * u2))

    def cdf(self, theta, u1, u2):
        (a,) = theta
        return u1 * u2 * (1.0 + a * (1.0 - u1) * (1.0 - u2))

    def h(self, theta, w, u):
        (a,) = theta
        return w + a * w * (1.0 - w) * (1.0 - 2.0 * u)

    def hinv(self, theta, q, u):
        (a,) = theta
        b = a * (1.0 - 2.0 * u)
        return 2.0 * q / ((1.0 + b) + np.sqrt((1.0 + b) ** 2 - 4.0 * b * q))

    def tau(self, theta):
        return 2.0 * theta[0] / 9.0

    def spearman(self, theta):
        return theta[0] / 3.0

    def to_free(self, theta):
        return np.array([math.atanh(theta[0])])

    def from_free(self, x):
        return (float(np.tanh(x[0])),)

    def free_jacobian(self, x):
        return np.array([1.0 - np.tanh(x[0]) ** 2])

    def from_tau(self, tau):
        return (min(max(4.5 * tau, -0.95), 0.95),)


class _StudentT(_Family):
    name = "studentt"
    nparams = 2
    param_names = ("rho", "nu")

    def check(self, theta):
        r, nu = theta
        if not (np.isfinite(r) and abs(r) < 1):
            raise DomainError(f"Student-t rho must satisfy |rho| < 1, got {r}")
        if not (nu >= 2 and np.isfinite(nu)):
            raise DomainError(f"Student-t nu must be finite and >= 2, got {nu}")

    def logpdf(self, theta, u1, u2):
        r, nu = theta
        x1 = special.stdtrit(nu, u1)
        x2 = special.stdtrit(nu, u2)
        one_m = 1.0 - r * r
        quad = x1 * x1 - 2.0 * r * x1 * x2 + x2 * x2
        const = (
            special.gammaln(0.5 * (nu + 2.0)) + special.gammaln(0.5 * nu)
            - 2.0 * special.gammaln(0.5 * (nu + 1.0))
        )
        return (
            const - 0.5 * np.log(one_m)
            - 0.5 * (nu + 2.0) * np.log1p(quad / (nu * one_m))
            + 0.5 * (nu + 1.0) * (np.log1p(x1 * x1 / nu) + np.log1p(x2 * x2 / nu))
        )

    def _scale(self, r, nu, xu):
        return np.sqrt((nu + xu * xu) * (1.0 - r * r) / (nu + 1.0))

    def h(self, theta, w, u):
        r, nu = theta
        xu = special.stdtrit(nu, u)
        with np.errstate(invalid="ignore"):
            z = (special.stdtrit(nu, w) - r * xu) / self._scale(r, nu, xu)
        return special.stdtr(nu + 1.0, z)

    def hinv(self, theta, q, u):
        r, nu = theta
        xu = special.stdtrit(nu, u)
        x = r * xu + special.stdtrit(nu + 1.0, q) * self._scale(r, nu, xu)
        return special.stdtr(nu, x)

    def cdf(self, theta, u1, u2):
        # C(u1, u2) = int_0^u1 h(u2 | s) ds. In s the integrand is a sigmoid
        # centred where t_nu^{-1}(s) = t_nu^{-1}(u2) / rho; Gauss-Legendre on
        # the two panels either side of the centre is accurate to ~1e-6.
        r, nu = theta
        u1, u2 = np.broadcast_arrays(np.asarray(u1, float), np.asarray(u2, float))
        x2 = special.stdtrit(nu, u2)
        with np.errstate(divide="ignore", invalid="ignore"):
            mid = special.stdtr(nu, x2 / r) if r != 0 else u2
        mid = np.clip(np.nan_to_num(mid, nan=0.5), 0.0, u1)
        rule = gauss_legendre(_T_CDF_ORDER)
        total = np.zeros(u1.shape)
        for lo, hi in ((np.zeros(u1.shape), mid), (mid, u1)):
            width = hi - lo
            s = lo[..., None] + width[..., None] * rule.nodes
            xs = special.stdtrit(nu, np.clip(s, 1e-300, 1.0))
            with np.errstate(invalid="ignore"):
                z = (x2[..., None] - r * xs) / self._scale(r, nu, xs)
            vals = np.nan_to_num(special.stdtr(nu + 1.0, z), nan=0.0)
            total = total + width * np.sum(rule.weights * vals, axis=-1)
        return total

    def tau(self, theta):
        return 2.0 / math.pi * math.asin(theta[0])

    def tails(self, theta):
        r, nu = theta
        lam = 2.0 * special.stdtr(nu + 1.0, -math.sqrt((nu + 1.0) * (1.0 - r) / (1.0 + r)))
        return float(lam), float(lam)

    def to_free(self, theta):
        r, nu = theta
        return np.array([math.atanh(r), math.log(nu - 2.0)])

    def from_free(self, x):
        return (float(np.tanh(x[0])), 2.0 + float(np.exp(x[1])))

    def free_jacobian(self, x):
        return np.array([1.0 - np.tanh(x[0]) ** 2, np.exp(x[1])])

    def from_tau(self, tau):
        return (math.sin(math.pi * min(max(tau, -0.95), 0.95) / 2.0), 5.0)


def _cdf_by_h(fam: _Family, theta, u1: float, u2: float) -> float:
    """``C(u1, u2) = int_0^u1 h(u2 | s) ds`` by adaptive quadrature."""
    f = lambda s: float(fam.h(theta, u2, s))  # noqa: E731
    pts = [u2] if u2 < u1 else None
    val, _ = integrate.quad(f, 0.0, u1, points=pts, epsabs=1e-13, epsrel=1e-11, limit=200)
    return min(max(val, 0.0), min(u1, u2))


_FAMILY_IMPL: dict[str, _Family] = {
    "clayton": _Clayton(),
    "gumbel": _Gumbel(),
    "frank": _Frank(),
    "gaussian": _Gaussian(),
    "efgm": _EFGM(),
    "studentt": _StudentT(),
}


# ---------------------------------------------------------------------------
# Public types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CopulaSpec:
    """A copula family, its parameter vector and an optional survival flag.

    Parameters
    ----------
    family : str
        One of :data:`FAMILIES` (aliases such as ``"t"`` are accepted).
    theta : tuple of float
        ``(alpha,)`` for the one-parameter families, ``(rho, nu)`` for the
        Student-t copula. A bare float is promoted to a 1-tuple.
    survival : bool
        Rotate by 180 degrees: ``C_s(v1, v2) = v1 + v2 - 1 + C(1 - v1, 1 - v2)``.
    """

    family: str
    theta: tuple = field(default=())
    survival: bool = False

    def __post_init__(self):
        fam = canonical_family(self.family)
        theta = self.theta
        if np.ndim(theta) == 0:
            theta = (theta,)
        theta = tuple(float(t) for t in theta)
        impl = _FAMILY_IMPL[fam]
        if len(theta) != impl.nparams:
            raise DomainError(f"{fam} copula takes {impl.nparams} parameter(s), got {len(theta)}")
        impl.check(theta)
        object.__setattr__(self, "family", fam)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "survival", bool(self.survival))

    @property
    def impl(self) -> _Family:
        return _FAMILY_IMPL[self.family]

    @property
    def nparams(self) -> int:
        return self.impl.nparams

    @property
    def is_independence(self) -> bool:
        return self.impl.is_independence(self.theta)

    def with_theta(self, theta) -> "CopulaSpec":
        return replace(self, theta=tuple(np.atleast_1d(theta).astype(float)))

    def to_free(self) -> np.ndarray:
        """Unconstrained coordinates of ``theta``."""
        return self.impl.to_free(self.theta)

    def from_free(self, x) -> "CopulaSpec":
        return replace(self, theta=self.impl.from_free(np.asarray(x, float)))

    def free_jacobian(self, x) -> np.ndarray:
        return self.impl.free_jacobian(np.asarray(x, float))

    def to_dict(self) -> dict:
        return {"family": self.family, "theta": list(self.theta), "survival": self.survival}

    @classmethod
    def from_dict(cls, d: dict) -> "CopulaSpec":
        try:
            return cls(d["family"], tuple(d["theta"]), bool(d.get("survival", False)))
        except KeyError as exc:
            raise DomainError(f"copula record missing field {exc}") from None


@dataclass(frozen=True)
class ScoreBundle:
    """Log-density and its first and second partial derivatives.

    Derivatives are with respect to the natural parameters ``theta`` (first
    ``d`` variables) and the two copula arguments. Array-valued entries carry
    the shape of the evaluation points as trailing axes.
    """

    log_c: np.ndarray
    d_alpha: np.ndarray  # (d, ...)
    d_u1: np.ndarray
    d_u2: np.ndarray
    d2_alpha: np.ndarray  # (d, d, ...)
    d2_u_alpha: tuple  # (d_u1 d_alpha, d_u2 d_alpha), each (d, ...)
    d2_u_u: np.ndarray  # (2, 2, ...)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def _as_prob(x, name: str, closed: bool = True) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if closed:
        ok = (x >= 0) & (x <= 1)
    else:
        ok = (x > 0) & (x < 1)
    if not np.all(ok):
        rng = "[0, 1]" if closed else "(0, 1)"
        raise DomainError(f"{name} must lie in {rng}")
    return x


def _ret(x):
    x = np.asarray(x, dtype=float)
    return float(x) if x.ndim == 0 else x


def copula_cdf(spec: CopulaSpec, u1, u2):
    """Copula CDF ``C(u1, u2)`` on ``[0, 1]^2``."""
    u1 = _as_prob(u1, "u1")
    u2 = _as_prob(u2, "u2")
    u1, u2 = np.broadcast_arrays(u1, u2)
    if spec.survival:
        base = replace(spec, survival=False)
        return _ret(u1 + u2 - 1.0 + np.asarray(copula_cdf(base, 1.0 - u1, 1.0 - u2)))
    if spec.is_independence:
        return _ret(u1 * u2)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        c = np.asarray(spec.impl.cdf(spec.theta, u1, u2), dtype=float)
    c = np.where((u1 == 0) | (u2 == 0), 0.0, c)
    c = np.where(u1 == 1, u2, np.where(u2 == 1, u1, c))
    lo = np.maximum(u1 + u2 - 1.0, 0.0)
    return _ret(np.clip(c, lo, np.minimum(u1, u2)))


def _logpdf_generic(spec: CopulaSpec, theta, u1, u2):
    """Log-density for float or jet arguments (no validation)."""
    if spec.survival:
        u1, u2 = 1.0 - u1, 1.0 - u2
    if spec.is_independence and all(not isinstance(t, _jet.Jet) for t in theta):
        return np.zeros(np.broadcast(_jet.value(u1), _jet.value(u2)).shape)
    return spec.impl.logpdf(theta, u1, u2)


def log_density(spec: CopulaSpec, u1, u2):
    """``log c(u1, u2)`` at interior points."""
    u1 = _as_prob(u1, "u1", closed=False)
    u2 = _as_prob(u2, "u2", closed=False)
    with np.errstate(divide="ignore", over="ignore"):
        return _ret(_logpdf_generic(spec, spec.theta, u1, u2))


def density(spec: CopulaSpec, u1, u2):
    return _ret(np.exp(log_density(spec, u1, u2)))


def log_density_derivatives(spec: CopulaSpec, u1, u2, order: int = 2, wrt_u: bool = True):
    """Jet of ``log c`` in the variables ``(theta..., u1, u2)``.

    Returns the value, the gradient (``(m, ...)``) and, for ``order=2``, the
    Hessian (``(m, m, ...)``). With ``wrt_u=False`` only ``theta`` varies.
    """
    u1 = np.asarray(u1, float)
    u2 = np.asarray(u2, float)
    shape = np.broadcast(u1, u2).shape
    d = spec.nparams
    if spec.is_independence and _limit_fd_needed(spec):
        return _independence_derivatives(spec, u1, u2, order, wrt_u)
    if wrt_u:
        vars_ = _jet.variables(list(spec.theta) + [u1, u2], order=order)
        theta, j1, j2 = tuple(vars_[:d]), vars_[d], vars_[d + 1]
    else:
        vars_ = _jet.variables(list(spec.theta), order=order)
        theta, j1, j2 = tuple(vars_), u1, u2
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        out = _logpdf_generic(spec, theta, j1, j2)
    if not isinstance(out, _jet.Jet):  # pragma: no cover - every family depends on theta
        raise UnsupportedError("log-density does not depend on the parameters")
    m = out.grad.shape[0]
    val = np.broadcast_to(out.val, shape)
    grad = np.broadcast_to(out.grad, (m,) + shape)
    hess = None if out.hess is None else np.broadcast_to(out.hess, (m, m) + shape)
    return val, grad, hess


def _limit_fd_needed(spec: CopulaSpec) -> bool:
    # Clayton and Frank formulas divide by alpha; Gumbel has log(z + alpha - 1)
    # finite at alpha = 1, so only the first two need the limit treatment.
    return spec.family in ("clayton", "frank")


def _independence_derivatives(spec, u1, u2, order, wrt_u):
    """Derivatives at alpha = 0 for Clayton/Frank, where the closed forms are
    0/0 limits.

    ``log c`` vanishes identically in ``(u1, u2)`` at independence, so every
    pure-``u`` derivative is exactly zero. The parameter derivatives come from
    polynomial extrapolation of jets at nearby parameters: one-sided (cubic
    error) for Clayton, whose domain stops at 0, symmetric for Frank.
    """
    eps = 1e-3
    if spec.family == "clayton":
        pts, coef = (eps, 2 * eps, 3 * eps), (3.0, -3.0, 1.0)
    else:
        pts, coef = (-eps, eps), (0.5, 0.5)
    res = [log_density_derivatives(spec.with_theta(p), u1, u2, order, wrt_u) for p in pts]
    grad = sum(c * r[1] for c, r in zip(coef, res))
    hess = None if order == 1 else sum(c * r[2] for c, r in zip(coef, res))
    d = spec.nparams
    if wrt_u:
        grad[d:] = 0.0
        if hess is not None:
            hess[d:, d:] = 0.0
    val = np.zeros(np.broadcast(u1, u2).shape)
    return val, grad, hess


def score_bundle(spec: CopulaSpec, u1, u2) -> ScoreBundle:
    """All first and second partials of ``log c`` at interior points.

    Raises
    ------
    DomainError
        If any point lies on the boundary of the unit square; callers clamp
        pseudo-observations first (see :func:`clamp_pseudo`).
    """
    u1 = _as_prob(u1, "u1", closed=False)
    u2 = _as_prob(u2, "u2", closed=False)
    d = spec.nparams
    val, g, h = log_density_derivatives(spec, u1, u2, order=2, wrt_u=True)
    return ScoreBundle(
        log_c=_ret(val),
        d_alpha=np.array(g[:d]),
        d_u1=_ret(g[d]),
        d_u2=_ret(g[d + 1]),
        d2_alpha=np.array(h[:d, :d]),
        d2_u_alpha=(np.array(h[d, :d]), np.array(h[d + 1, :d])),
        d2_u_u=np.array(h[d:, d:]),
    )


def conditional_cdf(spec: CopulaSpec, w, u):
    """``C_{2|1}(w | u) = dC(u, w)/du``."""
    w = _as_prob(w, "w")
    u = _as_prob(u, "u", closed=False)
    w, u = np.broadcast_arrays(w, u)
    if spec.is_independence:
        return _ret(w.copy())
    if spec.survival:
        base = replace(spec, survival=False)
        return _ret(1.0 - np.asarray(conditional_cdf(base, 1.0 - w, 1.0 - u)))
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        out = np.asarray(spec.impl.h(spec.theta, w, u), dtype=float)
    out = np.where(w <= 0, 0.0, np.where(w >= 1, 1.0, out))
    return _ret(np.clip(out, 0.0, 1.0))


def conditional_quantile(spec: CopulaSpec, q, u):
    """Inverse of :func:`conditional_cdf` in ``w``."""
    q = _as_prob(q, "q", closed=False)
    u = _as_prob(u, "u", closed=False)
    q, u = np.broadcast_arrays(q, u)
    if spec.is_independence:
        return _ret(q.copy())
    if spec.survival:
        base = replace(spec, survival=False)
        return _ret(1.0 - np.asarray(conditional_quantile(base, 1.0 - q, 1.0 - u)))
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        out = np.asarray(spec.impl.hinv(spec.theta, q, u), dtype=float)
    if not np.all(np.isfinite(out)):
        raise ConvergenceError("conditional quantile evaluation produced non-finite values")
    return _ret(np.clip(out, 0.0, 1.0))


# ---------------------------------------------------------------------------
# Dependence measures
# ---------------------------------------------------------------------------


def kendall_tau(spec: CopulaSpec) -> float:
    """Kendall's tau (closed form; Debye-function quadrature for Frank).

    Rotation by 180 degrees preserves concordance, so the survival flag does
    not change the value.
    """
    if spec.is_independence:
        return 0.0
    return float(spec.impl.tau(spec.theta))


def kendall_tau_quadrature(spec: CopulaSpec, order: int = DEFAULT_QUAD_ORDER) -> float:
    """``4 E[C(U1, U2)] - 1`` by tensor Gauss-Legendre quadrature.

    The expectation under the copula is computed with the change of
    variables ``U2 = C_{2|1}^{-1}(V | U1)`` so that the integrand is the
    bounded function ``C(u, h^{-1}(v | u))`` against the uniform measure.
    """
    u, v, w = unit_square_rule(order)
    u2 = np.asarray(conditional_quantile(spec, v, u))
    c = np.asarray(copula_cdf(spec, u, u2))
    return float(4.0 * np.sum(w * c) - 1.0)


def spearman_rho(spec: CopulaSpec, order: int = DEFAULT_QUAD_ORDER) -> float:
    """Spearman's rho, ``12 int int C - 3``; closed form where one is standard."""
    if spec.is_independence:
        return 0.0
    closed = spec.impl.spearman(spec.theta)
    if closed is not None:
        return float(closed)
    u, v, w = unit_square_rule(order)
    return float(12.0 * np.sum(w * np.asarray(copula_cdf(spec, u, v))) - 3.0)


def tail_dependence(spec: CopulaSpec) -> tuple[float, float]:
    """``(lambda_L, lambda_U)``; the survival flag swaps the pair."""
    if spec.is_independence:
        return 0.0, 0.0
    lo, up = spec.impl.tails(spec.theta)
    return (float(up), float(lo)) if spec.survival else (float(lo), float(up))


def survival_transform(spec: CopulaSpec) -> CopulaSpec:
    return replace(spec, survival=not spec.survival)


def tau_to_spec(family: str, tau: float, survival: bool = False) -> CopulaSpec:
    """Parameter with (approximately) the requested Kendall's tau."""
    fam = canonical_family(family)
    return CopulaSpec(fam, _FAMILY_IMPL[fam].from_tau(float(tau)), survival)


def clamp_pseudo(u, n: int) -> np.ndarray:
    """Clamp to ``[1/(2n), 1 - 1/(2n)]``."""
    lo = 0.5 / n
    return np.clip(np.asarray(u, dtype=float), lo, 1.0 - lo)


# ---------------------------------------------------------------------------
# Ideal information in closed form
# ---------------------------------------------------------------------------

_EFGM_SERIES_CUTOFF = 0.05
_CLAYTON_INT_ORDER = 160


@lru_cache(maxsize=128)
def clayton_int(alpha: float, order: int = _CLAYTON_INT_ORDER) -> float:
    """The double integral

    ``int_1^inf int_1^inf [xy (ln x - ln y)^2 - x (ln x)^2 - y (ln y)^2]
    / (x + y - 1)^(4 + 1/alpha) dx dy``.

    With ``a = ln x``, ``b = ln y`` the integrand is symmetric, so the
    computation runs over ``a >= b`` in the coordinates ``m = b`` and
    ``d = a - b``. Along ``m`` the integrand decays like ``exp(-m / alpha)``
    and along ``d`` like ``exp(-(2 + 1/alpha) d)``; each half-line is mapped
    to (0, 1) by ``t = L s / (1 - s)`` with a matching length scale ``L``.
    Exponentials are combined in log space so nothing overflows.
    """
    if not alpha > 0:
        raise DomainError("Clayton alpha must be positive")
    r = gauss_legendre(order)
    s = r.nodes
    ratio = s / (1.0 - s)
    lm, ld = 2.0 * max(alpha, 0.5), 0.5
    m = lm * ratio
    d = ld * ratio
    wm = r.weights * lm / (1.0 - s) ** 2
    wd = r.weights * ld / (1.0 - s) ** 2
    mm, dd = np.meshgrid(m, d, indexing="ij")
    a, b = mm + dd, mm
    lse = np.logaddexp(a, b)
    log_den = lse + np.log1p(-np.exp(-lse))  # ln(x + y - 1)
    base = -(4.0 + 1.0 / alpha) * log_den
    with np.errstate(under="ignore"):
        integrand = (
            np.exp(2 * a + 2 * b + base) * dd * dd
            - np.exp(2 * a + b + base) * a * a
            - np.exp(a + 2 * b + base) * b * b
        )
    return float(2.0 * np.sum(np.outer(wm, wd) * integrand))


def sigma_ideal_closed_form(spec: CopulaSpec) -> float:
    """Fisher information of the copula parameter when the marginal is known.

    Available for the Gaussian, EFGM and Clayton families. Survival rotation
    leaves the information unchanged.
    """
    a = spec.theta[0]
    if spec.family == "gaussian":
        return (1.0 + a * a) / (1.0 - a * a) ** 2
    if spec.family == "efgm":
        m = abs(a)
        if m < _EFGM_SERIES_CUTOFF:
            k = np.arange(1, 40)
            return float(np.sum(m ** (2 * k - 2) / (1.0 + 2 * k) ** 2))
        return (polylog2(m) - polylog2(m * m) / 4.0 - m) / m**3
    if spec.family == "clayton":
        if a <= 0:
            raise DomainError("Clayton ideal information requires alpha > 0")
        return (
            1.0 / (a * (1 + a)) + 1.0 / (a * (1 + a) ** 2 * (1 + 2 * a))
            + (1 + a) * (1 + 2 * a) / a**5 * clayton_int(a)
        )
    raise UnsupportedError(f"no closed-form ideal information for the {spec.family} family")


def fisher_information_quadrature(spec: CopulaSpec, order: int = 200) -> np.ndarray:
    """``-E[d^2 log c / d theta^2]`` under the copula by quadrature.

    Uses the conditional-quantile change of variables, so the weight is the
    uniform measure on the unit square.
    """
    r = gauss_legendre(order)
    u, v = np.meshgrid(r.nodes, r.nodes, indexing="ij")
    w = np.outer(r.weights, r.weights)
    u2 = np.asarray(conditional_quantile(spec, v, u))
    lo = 1e-300
    u2 = np.clip(u2, lo, 1 - 1e-16)
    _, _, h = log_density_derivatives(spec, u, u2, order=2, wrt_u=False)
    d = spec.nparams
    return -np.sum(h[:d, :d] * w, axis=(-2, -1))
