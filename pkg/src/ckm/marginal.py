"""Invariant-distribution models.

Two kinds of marginal are provided:

* :class:`ParametricMarginal` -- standard and location-scale Student-t,
  Normal(mu, sigma) and the Gumbel-max extreme-value family.
* :class:`SieveDensity` -- a normalized sieve density on the real line,
  built on a fixed reference CDF ``T``. With ``s = T(y)`` and reference
  density ``r = T'``,

  ``g(y) = r(y) f(T(y); a) / Z``,  ``Z = int_0^1 f(s; a) ds``,

  where ``f = exp(sum_k a_k A_k(s))`` (log form) or ``f = (1 + sum_k a_k
  A_k(s))^2`` (square-root form). Every computation therefore happens on
  the unit interval, and ``G(y) = F(T(y))`` with ``F`` the CDF of ``f / Z``.

:class:`CumulativeIntegrator` evaluates ``F`` and its coefficient
derivatives at a fixed set of points; the sieve estimator builds one per data
set and reuses it for every likelihood evaluation.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np
from scipy import interpolate, optimize, special, stats

from .errors import ConfigurationError, ConvergenceError, DomainError, NumericRangeError, StateError
from .numerics import gauss_legendre, student_t_cdf, student_t_logpdf, student_t_quantile

COEF_BOUND = 30.0
_EXP_LIMIT = 700.0
EULER_GAMMA = 0.5772156649015329

# ---------------------------------------------------------------------------
# Parametric marginals
# ---------------------------------------------------------------------------

_PARAM_ALIASES = {
    "studentt": "studentt",
    "student-t": "studentt",
    "t": "studentt",
    "lst": "lst",
    "t-ls": "lst",
    "studentt-ls": "lst",
    "location-scale-t": "lst",
    "normal": "normal",
    "gaussian": "normal",
    "n": "normal",
    "extreme_value": "extreme_value",
    "extreme-value": "extreme_value",
    "ev": "extreme_value",
    "gumbel": "extreme_value",
}


def canonical_marginal(name: str) -> str:
    key = str(name).strip().lower()
    if key not in _PARAM_ALIASES:
        raise DomainError(f"unknown marginal family {name!r}")
    return _PARAM_ALIASES[key]


@dataclass(frozen=True)
class ParametricMarginal:
    """A parametric invariant distribution.

    ``studentt`` takes ``(nu,)`` (standard location and scale); ``lst`` is
    the location-scale Student-t with ``(nu, loc, scale)``; ``normal`` takes
    ``(mu, sigma)``; ``extreme_value`` takes ``(loc, scale)`` for
    ``F(y) = exp(-exp(-(y - loc) / scale))``.
    """

    family: str
    theta: tuple = ()

    def __post_init__(self):
        fam = canonical_marginal(self.family)
        theta = self.theta
        if np.ndim(theta) == 0:
            theta = (theta,)
        theta = tuple(float(t) for t in theta)
        need = {"studentt": 1, "lst": 3}.get(fam, 2)
        if len(theta) != need:
            raise DomainError(f"{fam} marginal takes {need} parameter(s), got {len(theta)}")
        if not all(np.isfinite(theta)):
            raise DomainError("marginal parameters must be finite")
        if fam in ("studentt", "lst") and not theta[0] > 0:
            raise DomainError(f"degrees of freedom must be positive, got {theta[0]}")
        if fam != "studentt" and not theta[-1] > 0:
            raise DomainError(f"scale must be positive, got {theta[-1]}")
        object.__setattr__(self, "family", fam)
        object.__setattr__(self, "theta", theta)

    @classmethod
    def parse(cls, text: str) -> "ParametricMarginal":
        """Parse shorthand such as ``t3``, ``normal``, ``normal:0,2`` or ``ev:0,1``."""
        t = str(text).strip().lower()
        if t.startswith("t") and t[1:].replace(".", "", 1).isdigit():
            return cls("studentt", (float(t[1:]),))
        name, _, params = t.partition(":")
        fam = canonical_marginal(name)
        if params:
            theta = tuple(float(p) for p in params.split(","))
        else:
            theta = {"studentt": (5.0,), "lst": (5.0, 0.0, 1.0), "normal": (0.0, 1.0),
                     "extreme_value": (0.0, 1.0)}[fam]
        return cls(fam, theta)

    def logpdf(self, y):
        y = np.asarray(y, dtype=float)
        if self.family == "studentt":
            return student_t_logpdf(y, self.theta[0])
        if self.family == "lst":
            nu, loc, sc = self.theta
            return student_t_logpdf((y - loc) / sc, nu) - math.log(sc)
        loc, sc = self.theta
        z = (y - loc) / sc
        if self.family == "normal":
            return -0.5 * z * z - math.log(sc) - 0.5 * math.log(2 * math.pi)
        with np.errstate(over="ignore"):
            return -z - np.exp(-z) - math.log(sc)

    def pdf(self, y):
        return np.exp(self.logpdf(y))

    def cdf(self, y):
        y = np.asarray(y, dtype=float)
        if self.family == "studentt":
            return student_t_cdf(y, self.theta[0])
        if self.family == "lst":
            nu, loc, sc = self.theta
            return student_t_cdf((y - loc) / sc, nu)
        loc, sc = self.theta
        z = (y - loc) / sc
        if self.family == "normal":
            return special.ndtr(z)
        with np.errstate(over="ignore"):
            return np.exp(-np.exp(-z))

    def quantile(self, p):
        p = np.asarray(p, dtype=float)
        if np.any((p <= 0) | (p >= 1)):
            raise DomainError("quantile probability must lie in (0, 1)")
        if self.family == "studentt":
            return student_t_quantile(p, self.theta[0])
        if self.family == "lst":
            nu, loc, sc = self.theta
            return loc + sc * student_t_quantile(p, nu)
        loc, sc = self.theta
        if self.family == "normal":
            return loc + sc * special.ndtri(p)
        return loc - sc * np.log(-np.log(p))

    def evaluate(self, y):
        """``(pdf, cdf)`` at ``y``."""
        return self.pdf(y), self.cdf(y)

    # -- unconstrained coordinates ----------------------------------------

    def to_free(self) -> np.ndarray:
        if self.family == "studentt":
            return np.array([math.log(self.theta[0])])
        if self.family == "lst":
            nu, loc, sc = self.theta
            return np.array([math.log(nu), loc, math.log(sc)])
        return np.array([self.theta[0], math.log(self.theta[1])])

    def from_free(self, x) -> "ParametricMarginal":
        x = np.asarray(x, dtype=float)
        if self.family == "studentt":
            return ParametricMarginal(self.family, (float(np.exp(x[0])),))
        if self.family == "lst":
            return ParametricMarginal(self.family, (float(np.exp(x[0])), float(x[1]), float(np.exp(x[2]))))
        return ParametricMarginal(self.family, (float(x[0]), float(np.exp(x[1]))))

    @classmethod
    def moment_start(cls, family: str, y) -> "ParametricMarginal":
        """Method-of-moments starting value."""
        fam = canonical_marginal(family)
        y = np.asarray(y, dtype=float)
        m, s = float(np.mean(y)), float(np.std(y))
        s = max(s, 1e-8)
        if fam == "normal":
            return cls(fam, (m, s))
        if fam == "extreme_value":
            sc = s * math.sqrt(6) / math.pi
            return cls(fam, (m - EULER_GAMMA * sc, sc))
        if fam == "lst":
            # robust start at nu = 5: median and interquartile range
            q1, med, q3 = np.percentile(y, [25, 50, 75])
            sc = max(float(q3 - q1) / (2 * float(student_t_quantile(0.75, 5.0))), 1e-8)
            return cls(fam, (5.0, float(med), sc))
        var = float(np.var(y))
        nu = 2 * var / (var - 1) if var > 1.05 else 30.0
        return cls(fam, (min(max(nu, 2.2), 30.0),))

    def to_dict(self) -> dict:
        return {"kind": "parametric", "family": self.family, "theta": list(self.theta)}


def parametric_eval(m: ParametricMarginal, y):
    """``(pdf, cdf)`` of a parametric marginal at ``y``."""
    return m.evaluate(y)


def parametric_quantile(m: ParametricMarginal, p):
    return m.quantile(p)


# ---------------------------------------------------------------------------
# Reference maps
# ---------------------------------------------------------------------------


AUTO_REFERENCE = "auto"
_REF_PATTERN = re.compile(r"^(?P<base>[a-z]+[0-9.e+-]*)(?:\((?P<loc>[^,()]+),(?P<scale>[^,()]+)\))?$")


@dataclass(frozen=True)
class Reference:
    """A fixed CDF ``T`` mapping the real line onto (0, 1).

    Names are ``logistic``, ``normal`` or ``t<df>``, optionally followed by
    ``(loc,scale)`` for a location-scale version, e.g. ``t3.4(0.05,1.1)``.
    """

    name: str

    def __post_init__(self):
        name = str(self.name).strip().lower().replace(" ", "")
        m = _REF_PATTERN.match(name)
        if m is None:
            raise ConfigurationError(f"unknown reference map {self.name!r}")
        base = m.group("base")
        ok = base in ("logistic", "normal") or (
            base.startswith("t") and _is_number(base[1:]) and float(base[1:]) > 0)
        if not ok:
            raise ConfigurationError(f"unknown reference map {self.name!r}")
        if m.group("loc") is not None:
            loc, scale = m.group("loc"), m.group("scale")
            if not (_is_number(loc) and _is_number(scale)) or not math.isfinite(float(loc)) \
                    or not (float(scale) > 0 and math.isfinite(float(scale))):
                raise ConfigurationError(f"reference {self.name!r} needs a finite location and positive scale")
            if float(loc) == 0.0 and float(scale) == 1.0:
                name = base
            else:
                name = f"{base}({float(loc)!r},{float(scale)!r})"
        object.__setattr__(self, "name", name)

    @property
    def _parts(self):
        m = _REF_PATTERN.match(self.name)
        if m.group("loc") is None:
            return m.group("base"), 0.0, 1.0
        return m.group("base"), float(m.group("loc")), float(m.group("scale"))

    @property
    def base(self) -> str:
        return self._parts[0]

    @property
    def loc(self) -> float:
        return self._parts[1]

    @property
    def scale(self) -> float:
        return self._parts[2]

    @property
    def df(self) -> float:
        return float(self.base[1:])

    def _z(self, y):
        _, loc, scale = self._parts
        return (np.asarray(y, dtype=float) - loc) / scale

    def cdf(self, y):
        z = self._z(y)
        base = self.base
        if base == "logistic":
            return special.expit(z)
        if base == "normal":
            return special.ndtr(z)
        return student_t_cdf(z, self.df)

    def logpdf(self, y):
        z = self._z(y)
        base = self.base
        if base == "logistic":
            out = -np.abs(z) - 2.0 * np.log1p(np.exp(-np.abs(z)))
        elif base == "normal":
            out = -0.5 * z * z - 0.5 * math.log(2 * math.pi)
        else:
            out = student_t_logpdf(z, self.df)
        return out - math.log(self.scale)

    def quantile(self, s):
        s = np.asarray(s, dtype=float)
        base, loc, scale = self._parts
        if base == "logistic":
            z = special.logit(s)
        elif base == "normal":
            z = special.ndtri(s)
        else:
            z = student_t_quantile(s, self.df)
        return loc + scale * z


def fit_reference(y, df_bounds=(1.0, 50.0)) -> Reference:
    """Location-scale Student-t reference fitted to ``y`` by i.i.d. maximum likelihood.

    The degrees of freedom are clipped to ``df_bounds`` so that the map keeps
    polynomial tails and stays well defined for near-Gaussian data.
    """
    y = np.asarray(y, dtype=float)
    if y.size < 3 or not np.all(np.isfinite(y)):
        raise DomainError("fit_reference needs at least 3 finite observations")
    df, loc, scale = stats.t.fit(y)
    if not (np.isfinite(df) and np.isfinite(loc) and np.isfinite(scale) and scale > 0):
        raise ConvergenceError("location-scale t fit for the reference map failed")
    df = float(np.clip(df, *df_bounds))
    return Reference(f"t{_short(df)}({_short(loc)},{_short(scale)})")


def _short(x: float) -> str:
    # 10 significant digits keep reference names readable and exactly reproducible
    return format(float(x), ".10g")


def resolve_reference(reference: str, y) -> Reference:
    """Return ``Reference(reference)``, fitting it to ``y`` when it is ``"auto"``."""
    if str(reference).strip().lower() == AUTO_REFERENCE:
        return fit_reference(y)
    return Reference(reference)


def check_reference(reference: str) -> str:
    """Validate a reference name, allowing ``"auto"``; returns the canonical name."""
    if str(reference).strip().lower() == AUTO_REFERENCE:
        return AUTO_REFERENCE
    return Reference(reference).name


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


# ---------------------------------------------------------------------------
# Bases on the unit interval
# ---------------------------------------------------------------------------

BASES = ("polynomial", "cosine", "cubic-spline")


def canonical_basis(name: str) -> str:
    key = str(name).strip().lower().replace("_", "-")
    aliases = {"poly": "polynomial", "legendre": "polynomial", "spline": "cubic-spline", "cos": "cosine"}
    key = aliases.get(key, key)
    if key not in BASES:
        raise ConfigurationError(f"unknown sieve basis {name!r}; choose from {', '.join(BASES)}")
    return key


@lru_cache(maxsize=64)
def _spline_knots(K: int) -> np.ndarray:
    interior = np.linspace(0.0, 1.0, K - 1)[1:-1]  # K + 1 cubic B-splines
    return np.concatenate([np.zeros(4), interior, np.ones(4)])


@dataclass(frozen=True)
class Basis:
    """``K`` functions ``A_1..A_K`` on [0, 1].

    polynomial
        Orthonormal shifted Legendre polynomials ``sqrt(2k+1) P_k(2s-1)``.
    cosine
        ``sqrt(2) cos(k pi s)``.
    cubic-spline
        Cubic B-splines on equally spaced knots; ``K + 1`` functions with
        the last dropped, since the B-splines sum to one and a constant is
        absorbed by the normalization. Needs ``K >= 3``.
    """

    name: str
    K: int

    def __post_init__(self):
        object.__setattr__(self, "name", canonical_basis(self.name))
        if int(self.K) != self.K or self.K < 1:
            raise ConfigurationError(f"sieve dimension must be a positive integer, got {self.K}")
        if self.name == "cubic-spline" and self.K < 3:
            raise ConfigurationError("cubic-spline basis needs K >= 3")
        object.__setattr__(self, "K", int(self.K))

    def __call__(self, s) -> np.ndarray:
        """Design matrix of shape ``(*s.shape, K)``."""
        s = np.asarray(s, dtype=float)
        flat = s.ravel()
        if self.name == "polynomial":
            k = np.arange(1, self.K + 1)
            out = np.polynomial.legendre.legvander(2.0 * flat - 1.0, self.K)[:, 1:] * np.sqrt(2 * k + 1)
        elif self.name == "cosine":
            k = np.arange(1, self.K + 1)
            out = math.sqrt(2.0) * np.cos(np.pi * np.outer(flat, k))
        else:
            t = _spline_knots(self.K)
            x = np.clip(flat, 0.0, 1.0)
            out = interpolate.BSpline.design_matrix(x, t, 3).toarray()[:, : self.K]
        return out.reshape(s.shape + (self.K,))

    def breakpoints(self) -> np.ndarray:
        """Points where the basis is not smooth (spline knots)."""
        if self.name == "cubic-spline":
            return np.unique(_spline_knots(self.K))
        return np.array([0.0, 1.0])


# ---------------------------------------------------------------------------
# Unnormalized sieve density on (0, 1)
# ---------------------------------------------------------------------------

FORMS = ("log", "sqrt")


def _check_form(form: str) -> str:
    if form not in FORMS:
        raise ConfigurationError(f"sieve form must be one of {FORMS}, got {form!r}")
    return form


def _log_f(form: str, design: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
    lin = design @ coeffs
    if form == "log":
        if np.any(lin > _EXP_LIMIT):
            raise NumericRangeError("sieve exponent overflows; bound the coefficients")
        return lin
    with np.errstate(divide="ignore"):
        return 2.0 * np.log(np.abs(1.0 + lin))


def _psi(form: str, design: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
    """``d log f / d a_k`` (shape of ``design``)."""
    if form == "log":
        return design
    lin = design @ coeffs
    with np.errstate(divide="ignore", invalid="ignore"):
        return 2.0 * design / (1.0 + lin)[..., None]


class CumulativeIntegrator:
    """Cumulative integrals of ``f(s; a)`` at a fixed set of points.

    The unit interval is cut at the query points, at a coarse uniform grid
    and at the basis breakpoints; each resulting gap carries a small
    Gauss-Legendre rule. All basis evaluations are done once here, so
    :meth:`evaluate` is a handful of matrix-vector products.

    Cumulative sums are accumulated from both ends; points below the median
    use the lower-tail sum and points above it the upper-tail sum, so CDF
    values near 1 keep their relative accuracy in ``1 - F``.
    """

    def __init__(self, basis: Basis, points, form: str = "log", gap_nodes: int = 4, grid: int = 32):
        self.basis = basis
        self.form = _check_form(form)
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 1:
            raise ConfigurationError("points must be one-dimensional")
        if np.any((pts <= 0) | (pts >= 1)):
            raise DomainError("points must lie strictly inside (0, 1)")
        self.points = pts
        self.order = np.argsort(pts, kind="stable")
        sp = pts[self.order]
        cuts = np.unique(np.concatenate([[0.0, 1.0], sp, np.linspace(0, 1, grid + 1), basis.breakpoints()]))
        self.edges = cuts
        x, w = np.polynomial.legendre.leggauss(gap_nodes)
        lo, hi = cuts[:-1], cuts[1:]
        half = 0.5 * (hi - lo)
        self.nodes = (lo[:, None] + half[:, None] * (x + 1.0)).ravel()
        self.weights = (half[:, None] * w).ravel()
        self.n_gaps = len(lo)
        self.gap_nodes = gap_nodes
        # index of each sorted point among the cut points (its right edge)
        self.cut_index = np.searchsorted(cuts, sp)
        self.design_nodes = basis(self.nodes)
        self.design_points = basis(pts)

    def evaluate(self, coeffs, with_grad: bool = True) -> dict:
        """Densities, CDF values and coefficient derivatives at the points.

        Returns a dict with ``log_p`` (log density of ``F`` at the points),
        ``F``, ``log_Z`` and, when ``with_grad``, ``dlog_p`` (n, K) and
        ``dF`` (n, K) -- derivatives with respect to the coefficients.
        """
        a = np.asarray(coeffs, dtype=float)
        lf_nodes = _log_f(self.form, self.design_nodes, a)
        shift = float(np.max(lf_nodes))
        fw = np.exp(lf_nodes - shift) * self.weights
        gap = fw.reshape(self.n_gaps, self.gap_nodes).sum(axis=1)
        total = gap.sum()
        log_Z = math.log(total) + shift
        cum = np.concatenate([[0.0], np.cumsum(gap)])
        # cum[j] = integral from 0 to edges[j]; reverse tail from the top
        rcum = np.concatenate([np.cumsum(gap[::-1])[::-1], [0.0]])
        lower = cum[self.cut_index] / total
        upper_tail = rcum[self.cut_index] / total
        use_upper = lower >= 0.5
        F_sorted = np.where(use_upper, 1.0 - upper_tail, lower)
        F = np.empty_like(F_sorted)
        F[self.order] = F_sorted
        tail = np.empty_like(F_sorted)
        tail[self.order] = upper_tail
        log_p = _log_f(self.form, self.design_points, a) - log_Z
        out = {"log_p": log_p, "F": F, "log_Z": log_Z, "upper_tail": tail}
        if with_grad:
            psi_nodes = _psi(self.form, self.design_nodes, a)
            pw = psi_nodes * (fw / total)[:, None]
            gapk = pw.reshape(self.n_gaps, self.gap_nodes, -1).sum(axis=1)
            m = gapk.sum(axis=0)
            cumk = np.vstack([np.zeros((1, gapk.shape[1])), np.cumsum(gapk, axis=0)])
            rcumk = np.vstack([np.cumsum(gapk[::-1], axis=0)[::-1], np.zeros((1, gapk.shape[1]))])
            # dF/da_k = J_k(s) - F(s) m_k, equivalently -(R_k(s) - (1 - F(s)) m_k)
            J = cumk[self.cut_index]
            R = rcumk[self.cut_index]
            dF_sorted = np.where(use_upper[:, None], -(R - upper_tail[:, None] * m), J - lower[:, None] * m)
            dF = np.empty_like(dF_sorted)
            dF[self.order] = dF_sorted
            out["dF"] = dF
            out["dlog_p"] = _psi(self.form, self.design_points, a) - m
            out["mean_psi"] = m
        return out


# ---------------------------------------------------------------------------
# Sieve density
# ---------------------------------------------------------------------------

_TABLE_PANELS = 128
_PANEL_NODES = 8


@dataclass(frozen=True)
class SieveDensity:
    """Sieve density ``g(y) = r(y) f(T(y); a) / Z`` (see module docstring).

    ``log_Z`` is ``None`` until :func:`sieve_normalize` fills it in; CDF and
    quantile evaluation require a normalized density.
    """

    basis: str
    K: int
    coeffs: tuple
    reference: str = "t4"
    form: str = "log"
    log_Z: float | None = None
    quad_order: int = 256
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        b = Basis(self.basis, self.K)
        object.__setattr__(self, "basis", b.name)
        coeffs = tuple(float(c) for c in np.atleast_1d(self.coeffs))
        if len(coeffs) != self.K:
            raise ConfigurationError(f"expected {self.K} coefficients, got {len(coeffs)}")
        if not all(np.isfinite(coeffs)):
            raise NumericRangeError("sieve coefficients must be finite")
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "reference", Reference(self.reference).name)
        _check_form(self.form)
        if self.quad_order < 8:
            raise ConfigurationError("quad_order must be at least 8")

    # -- building blocks ------------------------------------------------------

    @property
    def basis_obj(self) -> Basis:
        return Basis(self.basis, self.K)

    @property
    def ref(self) -> Reference:
        return Reference(self.reference)

    @property
    def normalized(self) -> bool:
        return self.log_Z is not None

    def _require_normalized(self):
        if self.log_Z is None:
            raise StateError("sieve density is not normalized; call sieve_normalize first")

    def log_f(self, s):
        """Unnormalized log density on (0, 1)."""
        return _log_f(self.form, self.basis_obj(s), np.asarray(self.coeffs))

    def log_density_unit(self, s):
        self._require_normalized()
        return self.log_f(s) - self.log_Z

    # -- public evaluation -------------------------------------------------

    def logpdf(self, y):
        self._require_normalized()
        y = np.asarray(y, dtype=float)
        return self.ref.logpdf(y) + self.log_density_unit(self.ref.cdf(y))

    def pdf(self, y):
        return np.exp(self.logpdf(y))

    def _table(self):
        if "table" not in self._cache:
            edges = np.unique(np.concatenate([np.linspace(0.0, 1.0, _TABLE_PANELS + 1), self.basis_obj.breakpoints()]))
            x, w = np.polynomial.legendre.leggauss(_PANEL_NODES)
            lo, hi = edges[:-1], edges[1:]
            half = 0.5 * (hi - lo)
            nodes = lo[:, None] + half[:, None] * (x + 1.0)
            vals = np.exp(self.log_f(nodes) - self.log_Z)
            gap = np.sum(vals * half[:, None] * w, axis=1)
            cum = np.concatenate([[0.0], np.cumsum(gap)])
            # tail masses accumulated from the right, so upper-side values do
            # not inherit the rounding of total - cum
            self._cache["tail"] = np.concatenate([np.cumsum(gap[::-1])[::-1], [0.0]])
            self._cache["table"] = (edges, cum, cum[-1])
        return self._cache["table"]

    def _partial(self, a, b):
        """``int_a^b f / Z`` for arrays with ``b - a`` inside one panel."""
        x, w = np.polynomial.legendre.leggauss(_PANEL_NODES)
        half = 0.5 * (b - a)
        nodes = a[..., None] + half[..., None] * (x + 1.0)
        return np.sum(np.exp(self.log_f(nodes) - self.log_Z) * w, axis=-1) * half

    def cdf_unit(self, s):
        """CDF of the normalized density on (0, 1)."""
        self._require_normalized()
        s = np.clip(np.asarray(s, dtype=float), 0.0, 1.0)
        edges, cum, total = self._table()
        j = np.clip(np.searchsorted(edges, s, side="right") - 1, 0, len(edges) - 2)
        tail = self._cache["tail"]
        # each value is bracketed by its panel's edge values, which makes F
        # monotone across panels exactly
        low = np.clip((cum[j] + self._partial(edges[j], s)) / total, cum[j] / total, cum[j + 1] / total)
        up_tail = np.clip((tail[j + 1] + self._partial(s, edges[j + 1])) / total, tail[j + 1] / total, tail[j] / total)
        high = 1.0 - up_tail
        # switch from lower- to upper-tail accumulation at a panel edge near the
        # median; both sides are clamped against the lower-side edge value
        upper = cum[j] >= 0.5 * total
        k = min(int(np.searchsorted(cum, 0.5 * total, side="left")), len(cum) - 1)
        f_edge = cum[k] / total
        out = np.where(upper, np.maximum(high, f_edge), np.minimum(low, f_edge))
        return np.clip(out, 0.0, 1.0)

    def cdf(self, y):
        return self.cdf_unit(self.ref.cdf(np.asarray(y, dtype=float)))

    def quantile_unit(self, p):
        self._require_normalized()
        p = np.asarray(p, dtype=float)
        if np.any((p <= 0) | (p >= 1)):
            raise DomainError("quantile probability must lie in (0, 1)")
        edges, cum, total = self._table()
        target = p * total
        j = np.clip(np.searchsorted(cum, target, side="right") - 1, 0, len(edges) - 2)
        lo, hi = edges[j].copy(), edges[j + 1].copy()
        frac = (target - cum[j]) / np.maximum(cum[j + 1] - cum[j], 1e-300)
        s = lo + frac * (hi - lo)
        for _ in range(60):
            F = self.cdf_unit(s)
            err = F - p
            lo = np.where(err < 0, s, lo)
            hi = np.where(err > 0, s, hi)
            dens = np.exp(self.log_f(s) - self.log_Z)
            with np.errstate(divide="ignore", invalid="ignore"):
                newton = s - err / dens
            bisect = 0.5 * (lo + hi)
            s_new = np.where((newton > lo) & (newton < hi) & np.isfinite(newton), newton, bisect)
            done = np.abs(err) <= 1e-13
            if np.all(done):
                break
            s = np.where(done, s, s_new)
        else:
            if np.any(np.abs(self.cdf_unit(s) - p) > 1e-9):
                raise ConvergenceError("sieve quantile iteration did not converge")
        return s

    def quantile(self, p):
        s = self.quantile_unit(p)
        s = np.clip(s, 1e-300, 1.0 - 1e-16)
        return self.ref.quantile(s)

    # -- serialization --------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "kind": "sieve",
            "basis": self.basis,
            "K": self.K,
            "coeffs": list(self.coeffs),
            "reference": self.reference,
            "form": self.form,
            "log_Z": self.log_Z,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SieveDensity":
        try:
            return cls(
                basis=d["basis"], K=int(d["K"]), coeffs=tuple(d["coeffs"]),
                reference=d.get("reference", "t4"), form=d.get("form", "log"), log_Z=d.get("log_Z"),
            )
        except KeyError as exc:
            raise ConfigurationError(f"sieve record missing field {exc}") from None


def sieve_normalize(d: SieveDensity) -> SieveDensity:
    """Return a copy of ``d`` with ``log_Z`` set so that the density integrates to one.

    Uses Gauss-Legendre of order ``d.quad_order`` on the unit interval.

    Raises
    ------
    NumericRangeError
        If ``exp(sum a_k A_k)`` would overflow.
    """
    r = gauss_legendre(d.quad_order)
    lf = d.log_f(r.nodes)
    if not np.all(np.isfinite(lf)) and d.form == "log":
        raise NumericRangeError("sieve log-density is not finite at the quadrature nodes")
    shift = float(np.max(lf))
    total = float(np.dot(r.weights, np.exp(lf - shift)))
    if not total > 0:
        raise NumericRangeError("sieve density integrates to zero")
    return SieveDensity(d.basis, d.K, d.coeffs, d.reference, d.form, math.log(total) + shift, d.quad_order)


def sieve_cdf(d: SieveDensity, y):
    return d.cdf(y)


def sieve_quantile(d: SieveDensity, p):
    return d.quantile(p)


# ---------------------------------------------------------------------------
# Empirical CDF and known marginals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EmpiricalCDF:
    """Rescaled empirical CDF ``G_n(y) = (1/(n+1)) sum_t 1{Y_t <= y}``.

    The inverse interpolates linearly between order statistics at plotting
    positions ``k/(n+1)`` and is clamped to the sample range.
    """

    sample: tuple

    def __post_init__(self):
        s = np.sort(np.asarray(self.sample, dtype=float))
        if s.size < 1 or not np.all(np.isfinite(s)):
            raise DomainError("empirical CDF needs a nonempty finite sample")
        object.__setattr__(self, "sample", tuple(s.tolist()))

    @cached_property
    def _sorted(self) -> np.ndarray:
        return np.asarray(self.sample)

    @property
    def n(self) -> int:
        return len(self.sample)

    def cdf(self, y):
        return np.searchsorted(self._sorted, np.asarray(y, dtype=float), side="right") / (self.n + 1.0)

    def quantile(self, p):
        p = np.asarray(p, dtype=float)
        pos = np.arange(1, self.n + 1) / (self.n + 1.0)
        return np.interp(p, pos, self._sorted)

    def to_dict(self) -> dict:
        return {"kind": "empirical", "n": self.n}


def pseudo_observations(y) -> np.ndarray:
    """Ranks divided by ``n + 1``; ties get their average rank."""
    from scipy.stats import rankdata

    y = np.asarray(y, dtype=float)
    return rankdata(y, method="average") / (y.size + 1.0)


# ---------------------------------------------------------------------------
# Marginal-only sieve fit
# ---------------------------------------------------------------------------


def fit_sieve_marginal(y, basis: str = "polynomial", K: int = 5, reference: str = "t4", form: str = "log",
                       start=None) -> SieveDensity:
    """Maximum-likelihood sieve density for i.i.d. data (no copula term).

    Coefficients are bounded by ``|a_k| <= 30``. ``reference="auto"`` fits a
    location-scale Student-t map to ``y`` first (:func:`fit_reference`).
    """
    y = np.asarray(y, dtype=float)
    ref = resolve_reference(reference, y)
    s = ref.cdf(y)
    s = np.clip(s, 1e-15, 1 - 1e-15)
    b = Basis(basis, K)
    integ = CumulativeIntegrator(b, s, form=form)
    n = y.size

    def obj(a):
        out = integ.evaluate(a, with_grad=True)
        return -float(np.sum(out["log_p"])) / n, -np.sum(out["dlog_p"], axis=0) / n

    a0 = np.zeros(K) if start is None else np.asarray(start, dtype=float)
    if form == "sqrt" and start is None:
        a0 = np.full(K, 1e-3)
    res = optimize.minimize(obj, a0, jac=True, method="L-BFGS-B", bounds=[(-COEF_BOUND, COEF_BOUND)] * K,
                            options={"maxiter": 500, "ftol": 1e-13, "gtol": 1e-9})
    return sieve_normalize(SieveDensity(b.name, K, tuple(res.x), ref.name, form))
