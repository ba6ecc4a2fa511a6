"""Estimators of the copula parameter of a copula-based Markov chain.

* :func:`sieve_mle` -- joint maximum likelihood over the copula parameter
  and a sieve log-density of the invariant distribution, with the sieve
  dimension chosen by small-sample AIC.
* :func:`two_step` -- pseudo-likelihood on rescaled-rank pseudo-observations.
* :func:`ideal_mle` -- copula likelihood of the true latent uniforms.
* :func:`parametric_mle` -- joint likelihood with a parametric marginal,
  correctly or incorrectly specified.

All searches run L-BFGS-B in unconstrained coordinates of the copula
parameter (box-bounded to keep away from degenerate limits), with analytic
copula scores. Each estimator tries three starting points and keeps the best.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize, stats

from .copula import NU_FIT_BOUNDS, CopulaSpec, canonical_family, log_density_derivatives
from .copula import _logpdf_generic  # noqa: PLC2701 - unvalidated evaluation for jets and clamped arrays
from .errors import ConfigurationError, ConvergenceError, DomainError, EvaluationError
from .marginal import (
    AUTO_REFERENCE,
    COEF_BOUND,
    Basis,
    CumulativeIntegrator,
    EmpiricalCDF,
    ParametricMarginal,
    Reference,
    SieveDensity,
    canonical_marginal,
    check_reference,
    fit_sieve_marginal,
    fit_reference,
    pseudo_observations,
    sieve_normalize,
)
from .simulate import SeriesSample

METHODS = ("sieve", "two_step", "ideal", "parametric")
MAX_ITER = 500
FTOL = 1e-10
GTOL = 1e-6
CONVERGED_GRAD = 1e-5
N_STARTS = 3
DEFAULT_K_GRID = tuple(range(3, 11))
_U_EPS = 1e-12

# Box for the unconstrained copula coordinates, per family.
_FREE_BOUNDS = {
    "clayton": [(math.log(1e-6), math.log(200.0))],
    "gumbel": [(math.log(1e-6), math.log(200.0))],
    "frank": [(-150.0, 150.0)],
    "gaussian": [(-5.0, 5.0)],
    "efgm": [(-8.0, 8.0)],
    "studentt": [(-5.0, 5.0), (math.log(NU_FIT_BOUNDS[0] - 2.0), math.log(NU_FIT_BOUNDS[1] - 2.0))],
}
_MARGINAL_FREE_BOUNDS = {
    "studentt": [(math.log(0.3), math.log(300.0))],
    "lst": [(math.log(0.3), math.log(300.0)), (None, None), (-15.0, 15.0)],
    "normal": [(None, None), (-15.0, 15.0)],
    "extreme_value": [(None, None), (-15.0, 15.0)],
}


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class UniformMarginal:
    """The Uniform(0, 1) law, used as a known marginal."""

    def logpdf(self, y):
        y = np.asarray(y, dtype=float)
        return np.where((y >= 0) & (y <= 1), 0.0, -np.inf)

    def cdf(self, y):
        return np.clip(np.asarray(y, dtype=float), 0.0, 1.0)

    def quantile(self, p):
        return np.asarray(p, dtype=float)

    def to_dict(self) -> dict:
        return {"kind": "uniform"}


@dataclass(frozen=True)
class KnownMarginal:
    """A marginal treated as known (not estimated)."""

    marginal: object

    def logpdf(self, y):
        return self.marginal.logpdf(y)

    def cdf(self, y):
        return self.marginal.cdf(y)

    def quantile(self, p):
        return self.marginal.quantile(p)

    def to_dict(self) -> dict:
        return {"kind": "known", "model": self.marginal.to_dict()}


def marginal_from_dict(d: dict | None):
    if d is None:
        return None
    kind = d.get("kind")
    if kind == "sieve":
        return SieveDensity.from_dict(d)
    if kind == "parametric":
        return ParametricMarginal(d["family"], tuple(d["theta"]))
    if kind == "empirical":
        return EmpiricalCDF(tuple(d["sample"])) if "sample" in d else None
    if kind == "uniform":
        return UniformMarginal()
    if kind == "known":
        return KnownMarginal(marginal_from_dict(d["model"]))
    raise ConfigurationError(f"unknown marginal record kind {kind!r}")


@dataclass(frozen=True)
class FitResult:
    """Output of every estimator.

    ``loglik`` is the average log-likelihood maximized by the method (the
    pseudo- or copula-only likelihood for ``two_step`` and ``ideal``).
    ``diagnostics`` holds per-K records for the sieve estimator.
    """

    method: str
    copula_hat: CopulaSpec
    marginal_hat: object
    loglik: float
    K_selected: int | None
    converged: bool
    iterations: int
    gradient_norm: float
    diagnostics: tuple = field(default=(), compare=False)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown method {self.method!r}")

    @property
    def alpha(self) -> float:
        """First copula parameter."""
        return float(self.copula_hat.theta[0])

    def to_dict(self) -> dict:
        m = self.marginal_hat
        mrec = None
        if m is not None:
            mrec = m.to_dict()
            if isinstance(m, EmpiricalCDF):
                mrec["sample"] = list(m.sample)
        return {
            "method": self.method,
            "copula_hat": self.copula_hat.to_dict(),
            "marginal_hat": mrec,
            "loglik": self.loglik,
            "K_selected": self.K_selected,
            "converged": self.converged,
            "iterations": self.iterations,
            "gradient_norm": self.gradient_norm,
            "diagnostics": [dict(d) for d in self.diagnostics],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        try:
            return cls(
                method=d["method"],
                copula_hat=CopulaSpec.from_dict(d["copula_hat"]),
                marginal_hat=marginal_from_dict(d.get("marginal_hat")),
                loglik=float(d["loglik"]),
                K_selected=d.get("K_selected"),
                converged=bool(d["converged"]),
                iterations=int(d["iterations"]),
                gradient_norm=float(d["gradient_norm"]),
                diagnostics=tuple(d.get("diagnostics", ())),
            )
        except KeyError as exc:
            raise ConfigurationError(f"fit record missing field {exc}") from None


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------


def _template(family, survival: bool = False) -> CopulaSpec:
    """A spec of the requested family at a valid placeholder parameter."""
    if isinstance(family, CopulaSpec):
        return family
    fam = canonical_family(family)
    placeholder = {"clayton": 1.0, "gumbel": 2.0, "frank": 1.0, "gaussian": 0.3, "efgm": 0.3, "studentt": (0.3, 5.0)}
    return CopulaSpec(fam, placeholder[fam], survival)


def _values(series) -> np.ndarray:
    if isinstance(series, SeriesSample):
        return np.asarray(series.values, dtype=float)
    y = np.asarray(series, dtype=float)
    if y.ndim != 1 or not np.all(np.isfinite(y)):
        raise DomainError("series must be a finite one-dimensional array")
    return y


def _clip_u(u):
    return np.clip(u, _U_EPS, 1.0 - _U_EPS)


def _lag_tau(u: np.ndarray) -> float:
    return float(stats.kendalltau(u[:-1], u[1:])[0])


def _free_bounds(tmpl: CopulaSpec):
    return _FREE_BOUNDS[tmpl.family]


def _clip_free(x, bounds):
    x = np.array(x, dtype=float)
    for i, (lo, hi) in enumerate(bounds):
        if lo is not None:
            x[i] = max(x[i], lo)
        if hi is not None:
            x[i] = min(x[i], hi)
    return x


def _tau_start(tmpl: CopulaSpec, u: np.ndarray) -> np.ndarray:
    tau = _lag_tau(u)
    if not np.isfinite(tau):
        tau = 0.0
    spec = CopulaSpec(tmpl.family, tmpl.impl.from_tau(tau), tmpl.survival)
    return _clip_free(spec.to_free(), _free_bounds(tmpl))


def _projected_grad_norm(x, g, bounds) -> float:
    g = np.array(g, dtype=float)
    for i, (lo, hi) in enumerate(bounds):
        if lo is not None and x[i] <= lo + 1e-12 and g[i] > 0:
            g[i] = 0.0
        if hi is not None and x[i] >= hi - 1e-12 and g[i] < 0:
            g[i] = 0.0
    return float(np.linalg.norm(g))


@dataclass
class _Run:
    x: np.ndarray
    fun: float
    grad_norm: float
    nit: int
    converged: bool


def _minimize(fun, x0, bounds, polish: int = 2) -> _Run:
    """L-BFGS-B with restarts until the projected gradient is small."""
    x = _clip_free(x0, bounds)
    total_it = 0
    res = None
    for _ in range(1 + polish):
        res = optimize.minimize(
            fun, x, jac=True, method="L-BFGS-B", bounds=bounds,
            options={"maxiter": MAX_ITER, "ftol": FTOL, "gtol": GTOL, "maxcor": 20},
        )
        total_it += int(res.nit)
        x = res.x
        f, g = fun(x)
        gn = _projected_grad_norm(x, g, bounds)
        if np.isfinite(f) and gn <= CONVERGED_GRAD:
            return _Run(x, float(f), gn, total_it, True)
        if not np.isfinite(f):
            break
    f, g = fun(x)
    gn = _projected_grad_norm(x, g, bounds)
    return _Run(x, float(f), gn, total_it, False)


def _best_of(runs: list[_Run]) -> _Run:
    ok = [r for r in runs if np.isfinite(r.fun)]
    if not ok:
        raise ConvergenceError("every starting point produced a non-finite objective")
    conv = [r for r in ok if r.converged]
    pool = conv if conv else ok
    return min(pool, key=lambda r: r.fun)


def _copula_terms(spec: CopulaSpec, u1, u2, grad: bool):
    """Sum of ``log c`` and its derivatives (natural theta, per-point u)."""
    if not grad:
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            v = _logpdf_generic(spec, spec.theta, u1, u2)
        return np.asarray(v, float), None, None, None
    val, g, _ = log_density_derivatives(spec, u1, u2, order=1, wrt_u=True)
    d = spec.nparams
    return np.asarray(val), np.asarray(g[:d]), np.asarray(g[d]), np.asarray(g[d + 1])


# ---------------------------------------------------------------------------
# Likelihood
# ---------------------------------------------------------------------------


def joint_loglik(series, spec: CopulaSpec, g) -> float:
    """Average joint log-likelihood of a series under copula ``spec`` and marginal ``g``.

    ``(1/n) [ log g(Y_1) + sum_{t>=2} { log g(Y_t) + log c(G(Y_{t-1}), G(Y_t)) } ]``.
    ``g`` needs ``logpdf`` and ``cdf`` methods.

    Raises
    ------
    EvaluationError
        A term is not finite; ``.index`` is the 1-based time index.
    """
    y = _values(series)
    n = y.size
    if n < 2:
        raise DomainError("series length must be >= 2")
    lg = np.asarray(g.logpdf(y), dtype=float)
    bad = ~np.isfinite(lg)
    if np.any(bad):
        t = int(np.argmax(bad)) + 1
        raise EvaluationError(f"marginal log-density not finite at t={t}", t)
    u = _clip_u(np.asarray(g.cdf(y), dtype=float))
    lc, *_ = _copula_terms(spec, u[:-1], u[1:], grad=False)
    bad = ~np.isfinite(lc)
    if np.any(bad):
        t = int(np.argmax(bad)) + 2
        raise EvaluationError(f"copula log-density not finite at t={t}", t)
    return float((lg.sum() + lc.sum()) / n)


def copula_loglik(spec: CopulaSpec, u) -> float:
    """Average ``(1/n) sum_{t>=2} log c(u_{t-1}, u_t)``."""
    u = _clip_u(np.asarray(u, dtype=float))
    lc, *_ = _copula_terms(spec, u[:-1], u[1:], grad=False)
    return float(np.sum(lc) / u.size)


# ---------------------------------------------------------------------------
# Copula-only estimators
# ---------------------------------------------------------------------------


def _copula_objective(tmpl: CopulaSpec, u: np.ndarray):
    u1, u2 = u[:-1], u[1:]
    n = u.size

    def fun(x):
        try:
            spec = tmpl.from_free(x)
        except DomainError:
            return math.inf, np.zeros_like(x)
        val, ga, _, _ = _copula_terms(spec, u1, u2, grad=True)
        total = val.sum()
        if not np.isfinite(total):
            return math.inf, np.zeros_like(x)
        grad = ga.sum(axis=1) * spec.free_jacobian(x)
        return -total / n, -grad / n

    return fun


def fit_copula(u, family, method: str = "ideal", starts=None) -> FitResult:
    """Maximize ``sum log c(u_{t-1}, u_t)`` over the copula parameter."""
    tmpl = _template(family)
    u = _clip_u(np.asarray(u, dtype=float))
    if u.size < 10:
        raise DomainError("copula fit needs n >= 10")
    bounds = _free_bounds(tmpl)
    fun = _copula_objective(tmpl, u)
    if starts is None:
        x0 = _tau_start(tmpl, u)
        starts = [x0, x0 + 0.3, x0 - 0.3][:N_STARTS]
    runs = []
    for s in starts:
        try:
            runs.append(_minimize(fun, s, bounds))
        except (FloatingPointError, ValueError, DomainError):
            continue
    if not runs:
        raise ConvergenceError("copula fit failed from every start")
    best = _best_of(runs)
    if not best.converged:
        raise ConvergenceError(f"{method} fit did not converge (gradient norm {best.grad_norm:.2e})")
    return FitResult(
        method=method, copula_hat=tmpl.from_free(best.x), marginal_hat=None, loglik=-best.fun,
        K_selected=None, converged=True, iterations=best.nit, gradient_norm=best.grad_norm,
    )


def ideal_mle(series_u, family) -> FitResult:
    """Copula MLE on the true latent uniforms ``U_t = G_0(Y_t)``."""
    if isinstance(series_u, SeriesSample):
        if series_u.u_values is None:
            raise DomainError("ideal_mle needs the latent uniforms")
        series_u = series_u.u_values
    u = np.asarray(series_u, dtype=float)
    if np.any((u <= 0) | (u >= 1)):
        raise DomainError("latent uniforms must lie in (0, 1)")
    fit = fit_copula(u, family, "ideal")
    return replace(fit, marginal_hat=UniformMarginal())


def two_step(series, family) -> FitResult:
    """Pseudo-likelihood estimator on ranks divided by ``n + 1``."""
    y = _values(series)
    if y.size < 10:
        raise DomainError("two_step needs n >= 10")
    u = pseudo_observations(y)
    fit = fit_copula(u, family, "two_step")
    return replace(fit, marginal_hat=EmpiricalCDF(tuple(y)))


# ---------------------------------------------------------------------------
# Parametric marginal
# ---------------------------------------------------------------------------

_FD_STEP = 1e-6


def _parametric_objective(tmpl: CopulaSpec, fam: str, y: np.ndarray):
    d = tmpl.nparams
    n = y.size
    base = ParametricMarginal.moment_start(fam, y)

    def pieces(xm):
        m = base.from_free(xm)
        return np.asarray(m.logpdf(y)), np.asarray(m.cdf(y))

    def fun(x):
        xc, xm = x[:d], x[d:]
        try:
            spec = tmpl.from_free(xc)
            lg, G = pieces(xm)
        except DomainError:
            return math.inf, np.zeros_like(x)
        u = _clip_u(G)
        val, ga, gu1, gu2 = _copula_terms(spec, u[:-1], u[1:], grad=True)
        total = lg.sum() + val.sum()
        if not np.isfinite(total):
            return math.inf, np.zeros_like(x)
        grad = np.empty_like(x)
        grad[:d] = ga.sum(axis=1) * spec.free_jacobian(xc)
        # marginal parameters: central differences of log g and G
        for j in range(xm.size):
            e = np.zeros_like(xm)
            e[j] = _FD_STEP
            lp, Gp = pieces(xm + e)
            lm, Gm = pieces(xm - e)
            dlg = (lp - lm) / (2 * _FD_STEP)
            dG = (Gp - Gm) / (2 * _FD_STEP)
            grad[d + j] = dlg.sum() + np.dot(gu1, dG[:-1]) + np.dot(gu2, dG[1:])
        return -total / n, -grad / n

    return fun, base


def _marginal_only_mle(fam: str, y: np.ndarray) -> ParametricMarginal:
    base = ParametricMarginal.moment_start(fam, y)
    bounds = _MARGINAL_FREE_BOUNDS[base.family]

    def f(xm):
        try:
            v = -float(np.sum(base.from_free(xm).logpdf(y)))
        except DomainError:
            return math.inf
        return v if np.isfinite(v) else math.inf

    res = optimize.minimize(f, _clip_free(base.to_free(), bounds), method="L-BFGS-B", bounds=bounds)
    return base.from_free(res.x)


def parametric_mle(series, family, marginal_family: str = "studentt", two_step_fit: FitResult | None = None) -> FitResult:
    """Joint MLE of the copula parameter and a parametric marginal."""
    y = _values(series)
    if y.size < 10:
        raise DomainError("parametric_mle needs n >= 10")
    tmpl = _template(family)
    fam = canonical_marginal(marginal_family)
    fun, base = _parametric_objective(tmpl, fam, y)
    bounds = _free_bounds(tmpl) + _MARGINAL_FREE_BOUNDS[fam]
    m0 = _marginal_only_mle(fam, y)
    ts = two_step_fit if two_step_fit is not None else two_step(y, tmpl)
    xc_ts = _clip_free(ts.copula_hat.to_free(), _free_bounds(tmpl))
    x_tau = _tau_start(tmpl, pseudo_observations(y))
    starts = [
        np.concatenate([xc_ts, m0.to_free()]),
        np.concatenate([xc_ts + 0.2, m0.to_free()]),
        np.concatenate([x_tau, base.to_free()]),
    ][:N_STARTS]
    runs = []
    for s in starts:
        try:
            runs.append(_minimize(fun, s, bounds))
        except (FloatingPointError, ValueError, DomainError):
            continue
    if not runs:
        raise ConvergenceError("parametric fit failed from every start")
    best = _best_of(runs)
    d = tmpl.nparams
    return FitResult(
        method="parametric", copula_hat=tmpl.from_free(best.x[:d]), marginal_hat=base.from_free(best.x[d:]),
        loglik=-best.fun, K_selected=None, converged=best.converged, iterations=best.nit,
        gradient_norm=best.grad_norm,
    )


# ---------------------------------------------------------------------------
# Sieve MLE
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SieveConfig:
    """Sieve settings: basis, candidate dimensions, reference map and form."""

    basis: str = "polynomial"
    K_grid: tuple = DEFAULT_K_GRID
    reference: str = "auto"
    form: str = "log"

    def __post_init__(self):
        grid = tuple(int(k) for k in np.atleast_1d(self.K_grid))
        if not grid:
            raise ConfigurationError("K_grid must be nonempty")
        for k in grid:
            Basis(self.basis, k)  # validates basis and K
        object.__setattr__(self, "K_grid", grid)
        object.__setattr__(self, "basis", Basis(self.basis, grid[0]).name)
        object.__setattr__(self, "reference", check_reference(self.reference))

    def to_dict(self) -> dict:
        return {"basis": self.basis, "K_grid": list(self.K_grid), "reference": self.reference, "form": self.form}


class SieveProblem:
    """Joint sieve log-likelihood for one series and one sieve dimension.

    Parameters are ``x = (copula free coordinates, a_1..a_K)``. All basis
    evaluations are precomputed, so each call costs a few matrix-vector
    products plus one copula score evaluation.
    """

    def __init__(self, y, tmpl: CopulaSpec, K: int, cfg: SieveConfig, reference: Reference | None = None):
        self.y = np.asarray(y, dtype=float)
        self.n = self.y.size
        self.tmpl = tmpl
        self.K = K
        self.cfg = cfg
        self.ref = reference if reference is not None else _sieve_reference(cfg, self.y, tmpl, None)
        s = np.clip(self.ref.cdf(self.y), 1e-15, 1.0 - 1e-15)
        self.basis = Basis(cfg.basis, K)
        self.integ = CumulativeIntegrator(self.basis, s, form=cfg.form)
        self.log_r = float(np.sum(self.ref.logpdf(self.y)))
        self.d = tmpl.nparams
        self.bounds = _free_bounds(tmpl) + [(-COEF_BOUND, COEF_BOUND)] * K

    def loglik(self, theta_spec: CopulaSpec, a, grad: bool = True):
        """Average log-likelihood, gradient w.r.t. natural theta and w.r.t. a."""
        out = self.integ.evaluate(a, with_grad=grad)
        u = _clip_u(out["F"])
        val, ga, gu1, gu2 = _copula_terms(theta_spec, u[:-1], u[1:], grad=grad)
        total = self.log_r + out["log_p"].sum() + val.sum()
        if not grad:
            return total / self.n, None, None
        dF = out["dF"]
        g_a = out["dlog_p"].sum(axis=0) + gu1 @ dF[:-1] + gu2 @ dF[1:]
        return total / self.n, ga.sum(axis=1) / self.n, g_a / self.n

    def objective(self, x):
        xc, a = x[: self.d], x[self.d:]
        try:
            spec = self.tmpl.from_free(xc)
            L, gt, ga = self.loglik(spec, a)
        except (DomainError, FloatingPointError, ArithmeticError):
            return math.inf, np.zeros_like(x)
        if not np.isfinite(L) or not np.all(np.isfinite(ga)):
            return math.inf, np.zeros_like(x)
        grad = np.concatenate([gt * spec.free_jacobian(xc), ga])
        return -L, -grad

    def profile_objective(self, spec: CopulaSpec):
        """Objective in ``a`` alone with the copula fixed at ``spec``."""

        def fun(a):
            try:
                L, _, ga = self.loglik(spec, a)
            except (FloatingPointError, ArithmeticError):
                return math.inf, np.zeros_like(a)
            if not np.isfinite(L) or not np.all(np.isfinite(ga)):
                return math.inf, np.zeros_like(a)
            return -L, -ga

        return fun

    def density(self, a) -> SieveDensity:
        return sieve_normalize(SieveDensity(self.basis.name, self.K, tuple(float(v) for v in a),
                                            self.ref.name, self.cfg.form))

    def profile(self, spec: CopulaSpec, starts) -> _Run:
        """Maximize over ``a`` at fixed copula parameter."""
        fun = self.profile_objective(spec)
        bounds = [(-COEF_BOUND, COEF_BOUND)] * self.K
        runs = [_minimize(fun, s, bounds) for s in starts]
        return _best_of(runs)


def auto_reference(y, family, two_step_fit: FitResult | None = None) -> Reference:
    """Reference map for ``reference="auto"``: the location-scale Student-t
    marginal of the joint parametric MLE under the given copula family.

    Centring the sieve at the best parametric fit lets low-order terms act as
    corrections. Falls back to an i.i.d. location-scale t fit when the joint
    fit does not converge. Degrees of freedom are clipped to [1, 50].
    """
    y = _values(y)
    try:
        pf = parametric_mle(y, family, "lst", two_step_fit)
    except (ConvergenceError, DomainError, EvaluationError):
        pf = None
    if pf is None or not pf.converged:
        return fit_reference(y)
    nu, loc, scale = pf.marginal_hat.theta
    nu = min(max(nu, 1.0), 50.0)
    return Reference(f"t{nu:.10g}({loc:.10g},{scale:.10g})")


def _sieve_reference(cfg: SieveConfig, y, tmpl, ts) -> Reference:
    if cfg.reference == AUTO_REFERENCE:
        return auto_reference(y, tmpl, ts)
    return Reference(cfg.reference)


def aicc_score(loglik: float, K: int, n: int) -> float:
    """``L_n - K / (n - K - 1)`` (larger is better)."""
    return loglik - K / (n - K - 1.0)


def sieve_fit_K(y, family, K: int, cfg: SieveConfig, two_step_fit: FitResult | None = None,
                reference: Reference | None = None) -> FitResult:
    """Sieve MLE at a fixed dimension ``K``.

    ``reference`` overrides the map named in ``cfg`` (used to resolve
    ``"auto"`` once per series).
    """
    y = _values(y)
    tmpl = _template(family)
    ts = two_step_fit if two_step_fit is not None else two_step(y, tmpl)
    if reference is None:
        reference = _sieve_reference(cfg, y, tmpl, ts)
    prob = SieveProblem(y, tmpl, K, cfg, reference)
    marg = fit_sieve_marginal(y, cfg.basis, K, prob.ref.name, cfg.form)
    a0 = np.asarray(marg.coeffs)
    xc_ts = _clip_free(ts.copula_hat.to_free(), _free_bounds(tmpl))
    x_tau = _tau_start(tmpl, pseudo_observations(y))
    starts = [
        np.concatenate([xc_ts, a0]),
        np.concatenate([xc_ts + 0.2, 0.9 * a0]),
        np.concatenate([x_tau, a0]),
    ][:N_STARTS]
    runs = []
    for s in starts:
        try:
            runs.append(_minimize(prob.objective, s, prob.bounds))
        except (FloatingPointError, ValueError, DomainError, ArithmeticError):
            continue
    if not runs:
        raise ConvergenceError(f"sieve fit at K={K} failed from every start")
    best = _best_of(runs)
    d = tmpl.nparams
    return FitResult(
        method="sieve", copula_hat=tmpl.from_free(best.x[:d]), marginal_hat=prob.density(best.x[d:]),
        loglik=-best.fun, K_selected=K, converged=best.converged, iterations=best.nit,
        gradient_norm=best.grad_norm,
    )


def sieve_mle(series, family, sieve_cfg: SieveConfig | None = None, two_step_fit: FitResult | None = None) -> FitResult:
    """Sieve MLE with the sieve dimension chosen by small-sample AIC.

    For each ``K`` in the grid the joint likelihood is maximized over the
    copula parameter and ``a_1..a_K``; the returned fit maximizes
    ``L_n - K/(n - K - 1)`` among the converged ones. Per-K records are in
    ``diagnostics``.
    """
    cfg = sieve_cfg or SieveConfig()
    y = _values(series)
    n = y.size
    if n < 50:
        raise DomainError("sieve_mle needs n >= 50")
    if max(cfg.K_grid) >= n - 1:
        raise ConfigurationError("sieve dimension must be below n - 1")
    tmpl = _template(family)
    ts = two_step_fit if two_step_fit is not None else two_step(y, tmpl)
    ref = _sieve_reference(cfg, y, tmpl, ts)
    fits, diags = {}, []
    for K in cfg.K_grid:
        try:
            f = sieve_fit_K(y, tmpl, K, cfg, ts, ref)
        except (ConvergenceError, EvaluationError) as exc:
            diags.append({"K": K, "loglik": None, "aicc": None, "converged": False, "error": str(exc)})
            continue
        score = aicc_score(f.loglik, K, n)
        diags.append({"K": K, "loglik": f.loglik, "aicc": score, "converged": f.converged,
                      "alpha": list(f.copula_hat.theta)})
        if f.converged:
            fits[K] = (score, f)
    if not fits:
        raise ConvergenceError("sieve MLE did not converge for any K")
    K_hat = max(fits, key=lambda k: (fits[k][0], -k))
    return replace(fits[K_hat][1], diagnostics=tuple(diags))


# ---------------------------------------------------------------------------
# Dispatch
# ---------------------------------------------------------------------------


def fit(method: str, series, family, marginal_family: str | None = None, sieve_cfg: SieveConfig | None = None) -> FitResult:
    """Run one estimator by name (``two-step`` is accepted for ``two_step``)."""
    m = method.replace("-", "_")
    if m == "sieve":
        return sieve_mle(series, family, sieve_cfg)
    if m == "two_step":
        return two_step(series, family)
    if m == "ideal":
        return ideal_mle(series, family)
    if m == "parametric":
        return parametric_mle(series, family, marginal_family or "studentt")
    raise ConfigurationError(f"unknown method {method!r}; choose from sieve, two-step, ideal, parametric")
