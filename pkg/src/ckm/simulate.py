"""Stationary copula-based Markov chains and geometric-ergodicity drift checks.

A chain is generated from i.i.d. uniforms ``V_1, V_2, ...``:

``U_1 = V_1``,  ``U_t = C_{2|1}^{-1}(V_t | U_{t-1})``,  ``Y_t = G_0^{-1}(U_t)``.

The first ``burn_in`` draws are discarded. For the Student-t copula the
chain is generated in t-space by the equivalent autoregression

``X_t = rho X_{t-1} + e_t sqrt((nu + X_{t-1}^2)(1 - rho^2)/(nu + 1))``,

with ``X_t = t_nu^{-1}(U_t)`` and ``e_t = t_{nu+1}^{-1}(V_t)``. This avoids
one quantile inversion per step.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import special

from .copula import CopulaSpec
from .errors import ConfigurationError, DomainError, SimulationError
from .marginal import ParametricMarginal
from .numerics import RngStream, beta_fn, graded_rule

DEFAULT_BURN_IN = 2000

# U_t is kept inside [U_MIN, U_MAX] so that G_0^{-1}(U_t) stays finite
U_MIN = 1e-300
U_MAX = 1.0 - 2.0**-53


@dataclass(frozen=True)
class SimConfig:
    """Inputs of :func:`simulate_chain`."""

    copula: CopulaSpec
    marginal: ParametricMarginal
    n: int
    burn_in: int = DEFAULT_BURN_IN
    seed: int = 0
    stream_id: int = 0

    def __post_init__(self):
        if not isinstance(self.copula, CopulaSpec):
            raise ConfigurationError("copula must be a CopulaSpec")
        if not isinstance(self.marginal, ParametricMarginal):
            raise ConfigurationError("marginal must be a ParametricMarginal")
        if int(self.n) != self.n or self.n < 2:
            raise ConfigurationError(f"n must be an integer >= 2, got {self.n}")
        if int(self.burn_in) != self.burn_in or self.burn_in < 0:
            raise ConfigurationError(f"burn_in must be a nonnegative integer, got {self.burn_in}")
        # validates seed and stream_id
        RngStream(int(self.seed), int(self.stream_id))
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "burn_in", int(self.burn_in))
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "stream_id", int(self.stream_id))

    def to_dict(self) -> dict:
        return {
            "copula": self.copula.to_dict(),
            "marginal": self.marginal.to_dict(),
            "n": self.n,
            "burn_in": self.burn_in,
            "seed": self.seed,
            "stream_id": self.stream_id,
        }


@dataclass(frozen=True)
class SeriesSample:
    """An observed series ``Y_1..Y_n`` with the latent uniforms when known."""

    values: np.ndarray
    u_values: np.ndarray | None = None
    config: SimConfig | None = field(default=None, compare=False)

    def __post_init__(self):
        y = np.array(self.values, dtype=float)
        if y.ndim != 1 or y.size < 2:
            raise DomainError("a series needs at least two observations")
        if not np.all(np.isfinite(y)):
            raise DomainError("series contains non-finite values")
        y.setflags(write=False)
        object.__setattr__(self, "values", y)
        if self.u_values is not None:
            u = np.array(self.u_values, dtype=float)
            if u.shape != y.shape:
                raise DomainError("u_values must have the same length as values")
            if np.any((u <= 0) | (u >= 1)):
                raise DomainError("u_values must lie in (0, 1)")
            u.setflags(write=False)
            object.__setattr__(self, "u_values", u)

    @property
    def n(self) -> int:
        return int(self.values.size)

    def to_csv(self, path, include_u: bool = True) -> None:
        """Write ``t,y[,u]`` rows (``t`` counts from 1)."""
        with_u = include_u and self.u_values is not None
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "y", "u"] if with_u else ["t", "y"])
            for t in range(self.n):
                row = [t + 1, repr(float(self.values[t]))]
                if with_u:
                    row.append(repr(float(self.u_values[t])))
                w.writerow(row)

    @classmethod
    def from_csv(cls, path) -> "SeriesSample":
        """Read a series written by :meth:`to_csv` (a bare ``y`` column also works)."""
        path = Path(path)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise DomainError(f"{path}: empty series file")
        header = [h.strip().lower() for h in rows[0]]
        if "y" not in header:
            raise DomainError(f"{path}: missing 'y' column")
        iy = header.index("y")
        iu = header.index("u") if "u" in header else None
        try:
            y = [float(r[iy]) for r in rows[1:] if r]
            u = [float(r[iu]) for r in rows[1:] if r] if iu is not None else None
        except (ValueError, IndexError) as exc:
            raise DomainError(f"{path}: malformed row ({exc})") from None
        return cls(np.array(y), None if u is None else np.array(u))


# ---------------------------------------------------------------------------
# Chain generation
# ---------------------------------------------------------------------------


def _softplus(x: float) -> float:
    return x + math.log1p(math.exp(-x)) if x > 0 else math.log1p(math.exp(x))


def _clayton_step(alpha: float):
    b = alpha / (1.0 + alpha)

    def step(v: float, u: float) -> float:
        # log t = log(v^{-b} - 1) - alpha log u, kept in logs against overflow
        lt = math.log(math.expm1(-b * math.log(v))) - alpha * math.log(u)
        return math.exp(-_softplus(lt) / alpha)

    return step


def _gumbel_step(alpha: float):
    beta = alpha - 1.0

    def step(v: float, u: float) -> float:
        # solve z + beta ln z = c by Newton from z = x (monotone, see copula)
        x = -math.log(u)
        lx = math.log(x)
        c = x + beta * lx - math.log(v)
        z = x
        for _ in range(100):
            dz = (c - z - beta * math.log(z)) / (1.0 + beta / z)
            z += dz
            if abs(dz) <= 1e-15 * max(z, 1.0):
                break
        else:
            raise ValueError("Gumbel conditional quantile did not converge")
        y = z * (-math.expm1(alpha * (lx - math.log(z)))) ** (1.0 / alpha)
        return math.exp(-y)

    return step


def _generic_step(spec: CopulaSpec):
    impl, theta = spec.impl, spec.theta

    def step(v: float, u: float) -> float:
        return float(impl.hinv(theta, v, u))

    return step


def _uniform_path(spec: CopulaSpec, v: np.ndarray) -> np.ndarray:
    """``U_1..U_T`` by repeated conditional-quantile transforms."""
    if spec.is_independence:
        return np.clip(v.copy(), U_MIN, U_MAX)
    if spec.family == "clayton":
        base = _clayton_step(spec.theta[0])
    elif spec.family == "gumbel":
        base = _gumbel_step(spec.theta[0])
    else:
        base = _generic_step(spec)
    if spec.survival:
        step = lambda vv, uu: 1.0 - base(1.0 - vv, 1.0 - uu)  # noqa: E731
    else:
        step = base
    out = np.empty_like(v)
    u = min(max(float(v[0]), U_MIN), U_MAX)
    out[0] = u
    with np.errstate(all="ignore"):
        for t in range(1, v.size):
            try:
                nxt = step(float(v[t]), u)
            except (OverflowError, ValueError, ZeroDivisionError) as exc:
                raise SimulationError(f"conditional quantile failed: {exc}", t) from None
            if not math.isfinite(nxt):
                raise SimulationError("conditional quantile returned a non-finite value", t)
            u = min(max(nxt, U_MIN), U_MAX)
            out[t] = u
    return out


def _student_t_path(spec: CopulaSpec, v: np.ndarray) -> np.ndarray:
    """Student-t copula chain through the t-space autoregression.

    The t copula is radially symmetric, so the survival flag is immaterial.
    """
    rho, nu = spec.theta
    e = special.stdtrit(nu + 1.0, v)
    x = np.empty_like(v)
    xp = float(special.stdtrit(nu, v[0]))
    x[0] = xp
    c = (1.0 - rho * rho) / (nu + 1.0)
    for t in range(1, v.size):
        xp = rho * xp + float(e[t]) * math.sqrt((nu + xp * xp) * c)
        x[t] = xp
    if not np.all(np.isfinite(x)):
        bad = int(np.argmin(np.isfinite(x)))
        raise SimulationError("t-space recursion produced a non-finite value", bad)
    return np.clip(special.stdtr(nu, x), U_MIN, U_MAX)


def latent_path(spec: CopulaSpec, v, method: str = "auto") -> np.ndarray:
    """Latent uniform chain driven by the innovations ``v`` (no burn-in removed).

    ``method`` is ``"auto"`` (t-space recursion for the Student-t copula,
    conditional quantiles otherwise), ``"quantile"`` or ``"recursion"``.
    """
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size < 1 or np.any((v <= 0) | (v >= 1)):
        raise DomainError("innovations must be a nonempty vector in (0, 1)")
    if method not in ("auto", "quantile", "recursion"):
        raise ConfigurationError(f"unknown simulation method {method!r}")
    if method == "recursion" and spec.family != "studentt":
        raise ConfigurationError("the t-space recursion applies to the Student-t copula only")
    if spec.family == "studentt" and method != "quantile":
        return _student_t_path(spec, v)
    return _uniform_path(spec, v)


def latent_paths(spec: CopulaSpec, v) -> np.ndarray:
    """Many independent chains at once: ``v`` has shape ``(T, m)``.

    Each column is driven by its own innovations; the result has the same
    shape. Vectorized across chains, so useful for pooling terminal states.
    """
    from .copula import conditional_quantile

    v = np.asarray(v, dtype=float)
    if v.ndim != 2 or np.any((v <= 0) | (v >= 1)):
        raise DomainError("innovations must be a (T, m) array in (0, 1)")
    if spec.family == "studentt":
        rho, nu = spec.theta
        e = special.stdtrit(nu + 1.0, v)
        x = np.empty_like(v)
        x[0] = special.stdtrit(nu, v[0])
        c = (1.0 - rho * rho) / (nu + 1.0)
        for t in range(1, v.shape[0]):
            x[t] = rho * x[t - 1] + e[t] * np.sqrt((nu + x[t - 1] ** 2) * c)
        return np.clip(special.stdtr(nu, x), U_MIN, U_MAX)
    out = np.empty_like(v)
    out[0] = np.clip(v[0], U_MIN, U_MAX)
    for t in range(1, v.shape[0]):
        nxt = np.asarray(conditional_quantile(spec, v[t], out[t - 1]))
        if not np.all(np.isfinite(nxt)):
            raise SimulationError("conditional quantile returned a non-finite value", t)
        out[t] = np.clip(nxt, U_MIN, U_MAX)
    return out


def simulate_chain(cfg: SimConfig, method: str = "auto") -> SeriesSample:
    """Simulate ``cfg.n`` observations after ``cfg.burn_in`` discarded draws.

    Deterministic in ``(cfg.seed, cfg.stream_id)``.

    Raises
    ------
    SimulationError
        A conditional-quantile step failed; ``.step`` holds its index.
    """
    v = RngStream(cfg.seed, cfg.stream_id).uniforms(cfg.burn_in + cfg.n)
    u = latent_path(cfg.copula, v, method)[cfg.burn_in:]
    y = np.asarray(cfg.marginal.quantile(u), dtype=float)
    if not np.all(np.isfinite(y)):
        bad = int(np.argmin(np.isfinite(y)))
        raise SimulationError("marginal quantile produced a non-finite value", cfg.burn_in + bad)
    return SeriesSample(y, u, cfg)


# ---------------------------------------------------------------------------
# Kolmogorov-Smirnov tests (asymptotic p-values)
# ---------------------------------------------------------------------------


def kolmogorov_sf(lam: float) -> float:
    """``P(K > lam)`` for the Kolmogorov distribution."""
    if lam <= 0:
        return 1.0
    if lam < 0.2:
        return 1.0
    k = np.arange(1, 101)
    terms = 2.0 * (-1.0) ** (k - 1) * np.exp(-2.0 * k * k * lam * lam)
    return float(min(max(terms.sum(), 0.0), 1.0))


@dataclass(frozen=True)
class KSResult:
    statistic: float
    pvalue: float


def ks_uniform(u) -> KSResult:
    """One-sample KS test of ``u`` against Uniform(0, 1)."""
    u = np.sort(np.asarray(u, dtype=float))
    n = u.size
    if n < 1:
        raise DomainError("KS test needs data")
    i = np.arange(1, n + 1)
    d = max(float(np.max(i / n - u)), float(np.max(u - (i - 1) / n)))
    sn = math.sqrt(n)
    return KSResult(d, kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d))


def ks_two_sample(a, b) -> KSResult:
    """Two-sample KS test."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    if a.size < 1 or b.size < 1:
        raise DomainError("KS test needs data")
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    d = float(np.max(np.abs(fa - fb)))
    ne = math.sqrt(a.size * b.size / (a.size + b.size))
    return KSResult(d, kolmogorov_sf((ne + 0.12 + 0.11 / ne) * d))


# ---------------------------------------------------------------------------
# Drift diagnostics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DriftReport:
    """Numeric check of the drift condition behind geometric ergodicity.

    ``passes`` is ``None`` when no drift construction applies to the family.
    """

    family: str
    statistic: float
    threshold: float
    passes: bool | None
    note: str = ""

    def to_dict(self) -> dict:
        stat = self.statistic if math.isfinite(self.statistic) else None
        return {"family": self.family, "statistic": stat, "threshold": self.threshold,
                "passes": self.passes, "note": self.note}


def clayton_drift_rho(alpha: float, p: float | None = None) -> float:
    """``E[(V^{-alpha/(1+alpha)} - 1)^p]`` for ``V ~ U(0, 1)``, by quadrature.

    ``p`` defaults to ``1/(2 alpha)``.
    """
    if not alpha > 0:
        raise DomainError("Clayton drift statistic needs alpha > 0")
    p = 1.0 / (2.0 * alpha) if p is None else float(p)
    b = alpha / (1.0 + alpha)
    rule = graded_rule(16, 50)
    v = rule.nodes
    with np.errstate(over="ignore"):
        vals = np.expm1(-b * np.log(v)) ** p
    return float(np.dot(rule.weights, vals))


def gumbel_drift_kappa(alpha: float) -> float:
    """``(1 - 1/alpha) B(1 - 1/(2 alpha), 1 - 1/(2 alpha))``."""
    if not alpha > 1:
        raise DomainError("Gumbel drift statistic needs alpha > 1")
    s = 1.0 - 1.0 / (2.0 * alpha)
    return (1.0 - 1.0 / alpha) * beta_fn(s, s)


def student_t_drift_ratio(rho: float, nu: float) -> float:
    """``sqrt(rho^2 + (1 - rho^2) / (nu - 1))``; infinite for ``nu <= 1``."""
    if nu <= 1:
        return math.inf
    return math.sqrt(rho * rho + (1.0 - rho * rho) / (nu - 1.0))


def drift_diagnostic(spec: CopulaSpec) -> DriftReport:
    """Drift statistic for Clayton, Gumbel and Student-t chains.

    The chain is geometrically ergodic when the statistic is below 1.
    Independence parameters give an i.i.d. chain; families without tail
    dependence (Frank, Gaussian, EFGM) are reported as not applicable, since
    their ergodicity follows from a density bounded away from zero on
    compacts rather than from a tail drift construction.
    """
    fam = spec.family
    note = " (survival rotation: same mixing rates)" if spec.survival else ""
    if spec.is_independence:
        return DriftReport(fam, math.nan, 1.0, True, "trivially ergodic (i.i.d.)")
    if fam == "clayton":
        stat = clayton_drift_rho(spec.theta[0])
        return DriftReport(fam, stat, 1.0, stat < 1.0, f"rho(p) with p = 1/(2 alpha){note}")
    if fam == "gumbel":
        stat = gumbel_drift_kappa(spec.theta[0])
        return DriftReport(fam, stat, 1.0, stat < 1.0, f"kappa_alpha{note}")
    if fam == "studentt":
        rho, nu = spec.theta
        stat = student_t_drift_ratio(rho, nu)
        return DriftReport(fam, stat, 1.0, bool(stat < 1.0 and nu >= 2), "limit ratio of the t-space drift")
    return DriftReport(fam, math.nan, 1.0, None,
                       "not applicable: no tail dependence, drift construction not needed")
