"""Semiparametric inference for fitted copula Markov models.

* :func:`efficient_info` -- sieve least-squares estimate of the efficient
  information for the copula parameter, using a cosine sieve for the
  least-favourable direction.
* :func:`sigma_G` -- estimated asymptotic variance of the sieve CDF at a point.
* :func:`profile_lr_ci` -- confidence interval from inverting the profile
  sieve likelihood-ratio statistic.
* :func:`conditional_quantile_hat` -- plug-in conditional quantile.
* :func:`score_direction` / :func:`conditional_score_mean` -- the pathwise
  score in ``(alpha, b)`` directions and its conditional mean, which must
  vanish at the true parameters (martingale-difference property).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .copula import CopulaSpec, conditional_quantile, log_density_derivatives
from .copula import _logpdf_generic  # noqa: PLC2701 - vectorized density on clamped arrays
from .errors import ConfigurationError, ConvergenceError, DomainError, UnsupportedError
from .estimate import (
    FitResult,
    SieveConfig,
    SieveProblem,
    _clip_u,
    _free_bounds,
    _values,
    sieve_mle,
)
from .marginal import Reference, SieveDensity
from .numerics import brent_root, graded_rule

DEFAULT_K_NALPHA = 6
RIDGE = 1e-10


class RidgeWarning(UserWarning):
    """Normal equations were singular and a ridge term was added."""


# ---------------------------------------------------------------------------
# Cosine sieve for the nuisance directions
# ---------------------------------------------------------------------------


def cosine_basis(u, K: int) -> np.ndarray:
    """``sqrt(2) cos(k pi u)``, ``k = 1..K``, as an ``(n, K)`` matrix."""
    k = np.arange(1, K + 1)
    return math.sqrt(2.0) * np.cos(np.pi * k * np.asarray(u, float)[..., None])


def cosine_integral(u, K: int) -> np.ndarray:
    """``int_0^u sqrt(2) cos(k pi v) dv = sqrt(2) sin(k pi u) / (k pi)``."""
    k = np.arange(1, K + 1)
    return math.sqrt(2.0) * np.sin(np.pi * k * np.asarray(u, float)[..., None]) / (np.pi * k)


def _check_K(K_nalpha: int) -> int:
    K = int(K_nalpha)
    if K < 1:
        raise ConfigurationError("K_nalpha must be at least 1")
    return K


def _pseudo_u(fit: FitResult, series) -> np.ndarray:
    y = _values(series)
    g = fit.marginal_hat
    if g is None or not hasattr(g, "cdf"):
        raise ConfigurationError("fit has no marginal CDF")
    return _clip_u(np.asarray(g.cdf(y), dtype=float))


def _score_design(spec: CopulaSpec, u: np.ndarray, K: int):
    """Copula scores and the nuisance design rows for ``t = 2..n``.

    Returns ``(S_alpha (n-1, d), X (n-1, K))`` where row ``t`` of ``X`` is
    ``A(U_t) + d log c/du1 * int_0^{U_{t-1}} A + d log c/du2 * int_0^{U_t} A``.
    """
    u1, u2 = u[:-1], u[1:]
    _, g, _ = log_density_derivatives(spec, u1, u2, order=1, wrt_u=True)
    d = spec.nparams
    s_alpha = np.asarray(g[:d]).T
    s1, s2 = np.asarray(g[d]), np.asarray(g[d + 1])
    X = cosine_basis(u2, K) + s1[:, None] * cosine_integral(u1, K) + s2[:, None] * cosine_integral(u2, K)
    if not (np.all(np.isfinite(s_alpha)) and np.all(np.isfinite(X))):
        raise DomainError("copula scores are not finite at the pseudo-observations")
    return s_alpha, X


def _solve_normal(A: np.ndarray, b: np.ndarray, what: str):
    """Solve ``A x = b`` for symmetric PSD ``A``; add a ridge if singular."""
    try:
        cond = np.linalg.cond(A)
    except np.linalg.LinAlgError:
        cond = math.inf
    if np.isfinite(cond) and cond < 1e12:
        return np.linalg.solve(A, b), False
    warnings.warn(f"{what}: singular normal equations, ridge {RIDGE:g} added", RidgeWarning, stacklevel=3)
    scale = max(float(np.trace(A)) / A.shape[0], 1.0)
    return np.linalg.solve(A + RIDGE * scale * np.eye(A.shape[0]), b), True


# ---------------------------------------------------------------------------
# Efficient information
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InfoEstimate:
    """Estimated efficient information and the fitted projection coefficients."""

    I_star_hat: np.ndarray
    e_star_coeffs: np.ndarray
    K_nalpha: int
    ridge_used: bool = False
    max_residual_correlation: float = 0.0

    @property
    def variance(self) -> np.ndarray:
        """Asymptotic covariance of ``sqrt(n)(alpha_hat - alpha)``: the inverse of ``I_star_hat``."""
        return np.linalg.pinv(self.I_star_hat)

    def to_dict(self) -> dict:
        return {
            "I_star_hat": np.asarray(self.I_star_hat).tolist(),
            "e_star_coeffs": np.asarray(self.e_star_coeffs).tolist(),
            "K_nalpha": self.K_nalpha,
            "asymptotic_variance": self.variance.tolist(),
            "ridge_used": self.ridge_used,
            "max_residual_correlation": self.max_residual_correlation,
        }


def efficient_info_from_u(spec: CopulaSpec, u, K_nalpha: int = DEFAULT_K_NALPHA) -> InfoEstimate:
    """Efficient information from (pseudo-)observations ``u`` on the unit interval."""
    K = _check_K(K_nalpha)
    u = _clip_u(np.asarray(u, dtype=float))
    if u.size < K + 3:
        raise DomainError("too few observations for the requested K_nalpha")
    s_alpha, X = _score_design(spec, u, K)
    m = s_alpha.shape[0]
    A = X.T @ X / m
    B = X.T @ s_alpha / m
    coeffs, ridge = _solve_normal(A, B, "efficient_info")
    resid = s_alpha - X @ coeffs
    info = resid.T @ resid / m
    info = 0.5 * (info + info.T)
    orth = np.abs(X.T @ resid / m)
    scale = max(float(np.max(np.abs(B))), 1.0)
    return InfoEstimate(info, coeffs.T.copy(), K, ridge, float(np.max(orth)) / scale)


def efficient_info(fit: FitResult, series, K_nalpha: int = DEFAULT_K_NALPHA) -> InfoEstimate:
    """Efficient information at a fitted model, with ``U_t = G_hat(Y_t)``.

    Each copula-parameter score is regressed on the nuisance score directions
    spanned by ``K_nalpha`` cosine functions; the residual outer product
    estimates the efficient information.
    """
    if not fit.converged:
        raise ConvergenceError("efficient_info needs a converged fit")
    return efficient_info_from_u(fit.copula_hat, _pseudo_u(fit, series), K_nalpha)


# ---------------------------------------------------------------------------
# Variance of the sieve CDF
# ---------------------------------------------------------------------------


def sigma_G_from_u(spec: CopulaSpec, u, G_y: float, K_nalpha: int = DEFAULT_K_NALPHA) -> tuple[float, bool]:
    """``c' M^{-1} c`` for the CDF functional at ``G_y``; returns (value, ridge_used)."""
    K = _check_K(K_nalpha)
    u = _clip_u(np.asarray(u, dtype=float))
    s_alpha, X = _score_design(spec, u, K)
    Z = np.hstack([s_alpha, X])
    M = Z.T @ Z / Z.shape[0]
    c = np.zeros(Z.shape[1])
    c[s_alpha.shape[1]:] = np.mean((u <= G_y)[:, None] * cosine_basis(u, K), axis=0)
    sol, ridge = _solve_normal(M, c, "sigma_G")
    return max(float(c @ sol), 0.0), ridge


def sigma_G(fit: FitResult, series, y: float, K_nalpha: int = DEFAULT_K_NALPHA) -> float:
    """Estimated asymptotic variance of ``sqrt(n)(G_hat(y) - G(y))``."""
    if not fit.converged:
        raise ConvergenceError("sigma_G needs a converged fit")
    G_y = float(np.asarray(fit.marginal_hat.cdf(np.asarray([y], float)))[0])
    return sigma_G_from_u(fit.copula_hat, _pseudo_u(fit, series), G_y, K_nalpha)[0]


# ---------------------------------------------------------------------------
# Profile likelihood ratio interval
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LRInterval:
    """Profile likelihood-ratio confidence interval for a scalar copula parameter."""

    level: float
    estimate: float
    lower: float
    upper: float
    lr_at_bounds: tuple
    critical_value: float
    lower_at_boundary: bool = False
    upper_at_boundary: bool = False

    def __post_init__(self):
        if not (self.lower <= self.estimate <= self.upper):
            raise ConvergenceError("LR interval does not contain the point estimate")

    def covers(self, value: float) -> bool:
        return self.lower <= value <= self.upper

    def to_dict(self) -> dict:
        return {
            "level": self.level, "estimate": self.estimate, "lower": self.lower, "upper": self.upper,
            "lr_at_bounds": list(self.lr_at_bounds), "critical_value": self.critical_value,
            "lower_at_boundary": self.lower_at_boundary, "upper_at_boundary": self.upper_at_boundary,
        }


class ProfileLR:
    """``LR(alpha) = 2 n (L_hat - max_a L(alpha, a))`` at the fitted sieve dimension.

    Profile refits warm-start from the nearest previously profiled point
    (initially the unconstrained fit's coefficients).
    """

    def __init__(self, series, fit: FitResult):
        if fit.method != "sieve" or not isinstance(fit.marginal_hat, SieveDensity):
            raise ConfigurationError("profile LR needs a sieve fit")
        if fit.copula_hat.nparams != 1:
            raise UnsupportedError("profile LR intervals are built for scalar copula parameters only")
        g = fit.marginal_hat
        cfg = SieveConfig(basis=g.basis, K_grid=(g.K,), reference=g.reference, form=g.form)
        self.y = _values(series)
        self.n = self.y.size
        self.fit = fit
        self.problem = SieveProblem(self.y, fit.copula_hat, g.K, cfg, Reference(g.reference))
        self.a_hat = np.asarray(g.coeffs, dtype=float)
        self.x_hat = float(fit.copula_hat.to_free()[0])
        self.L_hat = float(fit.loglik)
        self._memo: dict[float, tuple[float, np.ndarray]] = {}

    def profile_loglik(self, x: float) -> float:
        """Maximum of the average sieve log-likelihood at free coordinate ``x``."""
        if x in self._memo:
            return self._memo[x][0]
        spec = self.fit.copula_hat.from_free(np.array([x]))
        near = sorted(self._memo, key=lambda k: abs(k - x))
        starts = [self.a_hat] + ([self._memo[near[0]][1]] if near else [])
        run = self.problem.profile(spec, starts)
        if not np.isfinite(run.fun) or not run.converged:
            raise ConvergenceError(f"profile refit failed at alpha = {spec.theta[0]!r}")
        L = -float(run.fun)
        self._memo[x] = (L, np.asarray(run.x))
        return L

    def lr_free(self, x: float) -> float:
        return 2.0 * self.n * (self.L_hat - self.profile_loglik(x))

    def lr(self, alpha: float) -> float:
        """LR statistic at the natural copula parameter ``alpha``."""
        spec = self.fit.copula_hat.with_theta((float(alpha),))
        return self.lr_free(float(spec.to_free()[0]))


def _side(prof: ProfileLR, crit: float, direction: int, lo_b: float, hi_b: float):
    """Walk outward from the estimate in the free coordinate, then root-find."""
    x0 = prof.x_hat
    step = 0.05
    inner = x0
    while True:
        x = x0 + direction * step
        edge = lo_b if direction < 0 else hi_b
        if (direction < 0 and x <= edge) or (direction > 0 and x >= edge):
            x = edge
            if prof.lr_free(x) <= crit:
                return x, prof.lr_free(x), True
            break
        if prof.lr_free(x) > crit:
            break
        inner = x
        step *= 2.0
    a, b = (x, inner) if direction < 0 else (inner, x)
    root = brent_root(lambda z: prof.lr_free(z) - crit, a, b, tol=1e-10)
    return root, prof.lr_free(root), False


def profile_lr_ci(series, family=None, sieve_cfg: SieveConfig | None = None, level: float = 0.95,
                  fit: FitResult | None = None) -> LRInterval:
    """Invert the profile sieve LR statistic against the chi-square(1) quantile.

    Either pass a converged sieve ``fit`` or let the function compute one with
    ``sieve_mle(series, family, sieve_cfg)``.
    """
    if not (0.0 < level < 1.0):
        raise DomainError("level must lie in (0, 1)")
    if fit is None:
        if family is None:
            raise ConfigurationError("pass either a sieve fit or a copula family")
        fit = sieve_mle(series, family, sieve_cfg)
    if not fit.converged:
        raise ConvergenceError("profile_lr_ci needs a converged sieve fit")
    prof = ProfileLR(series, fit)
    crit = float(stats.chi2.ppf(level, df=1))
    lo_b, hi_b = _free_bounds(fit.copula_hat)[0]
    xl, lrl, at_lo = _side(prof, crit, -1, lo_b, hi_b)
    xu, lru, at_hi = _side(prof, crit, +1, lo_b, hi_b)
    to_nat = lambda x: float(fit.copula_hat.from_free(np.array([x])).theta[0])  # noqa: E731
    return LRInterval(level, fit.alpha, to_nat(xl), to_nat(xu), (lrl, lru), crit, at_lo, at_hi)


# ---------------------------------------------------------------------------
# Conditional quantiles
# ---------------------------------------------------------------------------


def conditional_quantile_hat(fit: FitResult, q, y, marginal=None):
    """Plug-in conditional quantile ``G^{-1}(C_{2|1}^{-1}(q | G(y)))``.

    ``marginal`` overrides ``fit.marginal_hat`` (e.g. the known marginal for
    the ideal estimator, whose fit is on the uniform scale).
    """
    g = marginal if marginal is not None else fit.marginal_hat
    if g is None:
        raise ConfigurationError("fit has no marginal to invert")
    q = np.asarray(q, dtype=float)
    if np.any((q <= 0) | (q >= 1)):
        raise DomainError("q must lie in (0, 1)")
    y = np.asarray(y, dtype=float)
    u = _clip_u(np.asarray(g.cdf(y), dtype=float))
    w = np.asarray(conditional_quantile(fit.copula_hat, q, u), dtype=float)
    w = _clip_u(w)
    out = np.asarray(g.quantile(w), dtype=float)
    return float(out) if out.ndim == 0 else out


def true_conditional_quantile(spec: CopulaSpec, marginal, q, y):
    """Conditional quantile under known copula and marginal."""
    u = _clip_u(np.asarray(marginal.cdf(np.asarray(y, float)), dtype=float))
    w = _clip_u(np.asarray(conditional_quantile(spec, q, u), dtype=float))
    out = np.asarray(marginal.quantile(w), dtype=float)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Pathwise scores and the martingale-difference property
# ---------------------------------------------------------------------------


def score_direction(spec: CopulaSpec, u1, u2, v_alpha, b_coeffs) -> np.ndarray:
    """Score of ``log h(U_t | U_{t-1})`` in the direction ``(v_alpha, b)``.

    ``b(u) = sum_k b_k sqrt(2) cos(k pi u)`` perturbs the marginal density on
    the uniform scale; the score is
    ``d log c/d alpha . v_alpha + b(u2) + sum_j d log c/du_j int_0^{u_j} b``.
    """
    u1 = np.asarray(u1, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    b = np.atleast_1d(np.asarray(b_coeffs, dtype=float))
    v = np.atleast_1d(np.asarray(v_alpha, dtype=float))
    d = spec.nparams
    if v.size != d:
        raise ConfigurationError(f"v_alpha needs {d} components")
    _, g, _ = log_density_derivatives(spec, u1, u2, order=1, wrt_u=True)
    K = b.size
    out = np.tensordot(v, np.asarray(g[:d]), axes=1)
    out = out + cosine_basis(u2, K) @ b
    out = out + np.asarray(g[d]) * (cosine_integral(u1, K) @ b) + np.asarray(g[d + 1]) * (cosine_integral(u2, K) @ b)
    return out


def conditional_score_mean(spec: CopulaSpec, u1: float, v_alpha, b_coeffs, order: int = 16, levels: int = 40) -> float:
    """``E[score | U_{t-1} = u1]`` by graded quadrature over ``u2``; zero at the truth."""
    rule = graded_rule(order, levels)
    w2 = _clip_u(rule.nodes)
    u1a = np.full_like(w2, float(u1))
    with np.errstate(over="ignore", under="ignore"):
        dens = np.exp(np.asarray(_logpdf_generic(spec, spec.theta, u1a, w2), dtype=float))
    s = score_direction(spec, u1a, w2, v_alpha, b_coeffs)
    return float(np.sum(rule.weights * dens * s))


__all__ = [
    "DEFAULT_K_NALPHA",
    "InfoEstimate",
    "LRInterval",
    "ProfileLR",
    "RidgeWarning",
    "conditional_quantile_hat",
    "conditional_score_mean",
    "cosine_basis",
    "cosine_integral",
    "efficient_info",
    "efficient_info_from_u",
    "profile_lr_ci",
    "score_direction",
    "sigma_G",
    "sigma_G_from_u",
    "true_conditional_quantile",
]
