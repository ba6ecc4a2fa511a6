"""Monte Carlo comparison of the copula-parameter estimators.

Every replication simulates one series (stream ``r`` of ``base_seed``) and
fits each requested estimator to that same series. Replications run in a
process pool whose size is capped by the ``CKM_THREADS`` environment
variable; results are collected in replication order and summarized in the
main process, so reports do not depend on the number of workers.

Reported quantities (all ``x1e3`` cells are multiplied by 1000):

* copula parameter: mean, bias, bias^2, variance, MSE and the empirical
  2.5/97.5 percentiles of the estimates;
* marginal CDF: each method's ``G_hat`` evaluated at the true ``p``-quantiles
  of ``G_0``;
* conditional quantile ``Q_q(y)``: integrated squared bias, variance and MSE
  over a grid on the common support of all simulated samples.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .copula import CopulaSpec
from .errors import CKMError, ConfigFileError, ConfigurationError, ExperimentError
from .estimate import FitResult, SieveConfig, ideal_mle, parametric_mle, sieve_mle, two_step
from .inference import conditional_quantile_hat, true_conditional_quantile
from .marginal import ParametricMarginal
from .simulate import DEFAULT_BURN_IN, SimConfig, simulate_chain

try:  # Python 3.11+
    import tomllib as _toml
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as _toml

ESTIMATORS = ("sieve", "ideal", "two_step", "parametric", "mis_normal", "mis_ev")
ALPHA_METRICS = ("mean", "bias", "bias2_x1e3", "var_x1e3", "mse_x1e3", "q025", "q975")
CDF_METRICS = ("mean", "bias2_x1e3", "var_x1e3", "mse_x1e3")
QUANTILE_METRICS = ("int_bias2_x1e3", "int_var_x1e3", "int_mse_x1e3")
MAX_FAILURE_RATE = 0.20
GRID_SIZE = 100
_trapezoid = getattr(np, "trapezoid", None) or np.trapz
_MIS_FAMILY = {"mis_normal": "normal", "mis_ev": "extreme_value"}


def _canonical_estimator(name: str) -> str:
    key = str(name).strip().lower().replace("-", "_")
    key = {"2step": "two_step", "twostep": "two_step", "para": "parametric", "mis_n": "mis_normal"}.get(key, key)
    if key not in ESTIMATORS:
        raise ConfigurationError(f"unknown estimator {name!r}; choose from {', '.join(ESTIMATORS)}")
    return key


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CondQuantileConfig:
    """Conditional-quantile evaluation: level ``q`` and the ``y`` grid.

    ``y_grid="auto"`` uses ``grid_size`` equally spaced points on the
    intersection of the per-replication sample ranges.
    """

    q: float = 0.01
    y_grid: object = "auto"
    grid_size: int = GRID_SIZE

    def __post_init__(self):
        if not (0.0 < float(self.q) < 1.0):
            raise ConfigurationError("conditional quantile level must lie in (0, 1)")
        object.__setattr__(self, "q", float(self.q))
        if isinstance(self.y_grid, str):
            if self.y_grid != "auto":
                raise ConfigurationError("y_grid must be 'auto' or a list of numbers")
        else:
            grid = tuple(float(v) for v in self.y_grid)
            if len(grid) < 2 or any(b <= a for a, b in zip(grid, grid[1:])):
                raise ConfigurationError("explicit y_grid needs at least two increasing points")
            object.__setattr__(self, "y_grid", grid)
        if int(self.grid_size) < 2:
            raise ConfigurationError("grid_size must be at least 2")
        object.__setattr__(self, "grid_size", int(self.grid_size))

    def to_dict(self) -> dict:
        grid = self.y_grid if isinstance(self.y_grid, str) else list(self.y_grid)
        return {"q": self.q, "y_grid": grid, "grid_size": self.grid_size}


@dataclass(frozen=True)
class MCConfig:
    """A Monte Carlo design (one copula/marginal cell of a table)."""

    copula: CopulaSpec
    marginal: ParametricMarginal
    n: int = 1000
    reps: int = 200
    burn_in: int = DEFAULT_BURN_IN
    base_seed: int = 0
    estimators: tuple = ("sieve", "ideal", "two_step", "parametric")
    quantile_probs: tuple = (1.0 / 3.0, 2.0 / 3.0)
    cond_quantile: CondQuantileConfig | None = field(default_factory=CondQuantileConfig)
    sieve: SieveConfig = field(default_factory=SieveConfig)
    traces: int = 0

    def __post_init__(self):
        if int(self.reps) < 1:
            raise ConfigurationError("reps must be at least 1")
        if int(self.n) < 50:
            raise ConfigurationError("n must be at least 50")
        if int(self.burn_in) < 0:
            raise ConfigurationError("burn_in must be nonnegative")
        if int(self.traces) < 0:
            raise ConfigurationError("traces must be nonnegative")
        ests = tuple(dict.fromkeys(_canonical_estimator(e) for e in self.estimators))
        if not ests:
            raise ConfigurationError("estimators must be nonempty")
        probs = tuple(float(p) for p in self.quantile_probs)
        if any(not (0.0 < p < 1.0) for p in probs):
            raise ConfigurationError("quantile_probs must lie in (0, 1)")
        for name in ("n", "reps", "burn_in", "base_seed", "traces"):
            object.__setattr__(self, name, int(getattr(self, name)))
        object.__setattr__(self, "estimators", ests)
        object.__setattr__(self, "quantile_probs", probs)

    def sim_config(self, rep: int) -> SimConfig:
        return SimConfig(self.copula, self.marginal, self.n, self.burn_in, self.base_seed, stream_id=rep)

    def to_dict(self) -> dict:
        return {
            "copula": self.copula.to_dict(),
            "marginal": self.marginal.to_dict(),
            "n": self.n,
            "reps": self.reps,
            "burn_in": self.burn_in,
            "base_seed": self.base_seed,
            "estimators": list(self.estimators),
            "quantile_probs": list(self.quantile_probs),
            "cond_quantile": None if self.cond_quantile is None else self.cond_quantile.to_dict(),
            "sieve": self.sieve.to_dict(),
            "traces": self.traces,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MCConfig":
        """Build from a plain mapping (as produced by :meth:`to_dict` or a TOML file)."""
        try:
            cop = d["copula"]
            mar = d["marginal"]
        except KeyError as exc:
            raise ConfigFileError(f"experiment config missing section {exc}") from None
        copula = _copula_from_mapping(cop)
        marginal = _marginal_from_mapping(mar)
        cq = d.get("cond_quantile", {})
        cqc = None if cq is None or cq is False else CondQuantileConfig(**_only(cq, ("q", "y_grid", "grid_size")))
        sv = d.get("sieve", {})
        sieve = SieveConfig(**_only(sv, ("basis", "K_grid", "reference", "form")))
        kw = _only(d, ("n", "reps", "burn_in", "base_seed", "estimators", "quantile_probs", "traces"))
        unknown = set(d) - {"copula", "marginal", "cond_quantile", "sieve"} - set(kw)
        if unknown:
            raise ConfigFileError(f"unknown experiment keys: {', '.join(sorted(unknown))}")
        return cls(copula=copula, marginal=marginal, cond_quantile=cqc, sieve=sieve, **kw)

    @classmethod
    def from_toml(cls, path) -> "MCConfig":
        path = Path(path)
        try:
            with path.open("rb") as fh:
                data = _toml.load(fh)
        except FileNotFoundError:
            raise
        except _toml.TOMLDecodeError as exc:
            raise ConfigFileError(f"{path}: malformed TOML ({exc})") from None
        try:
            return cls.from_dict(data)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigFileError):
                raise
            raise ConfigFileError(f"{path}: {exc}") from None


def _only(d: dict, keys) -> dict:
    if not isinstance(d, dict):
        raise ConfigFileError("expected a table of settings")
    return {k: d[k] for k in keys if k in d}


def _copula_from_mapping(c: dict) -> CopulaSpec:
    if not isinstance(c, dict) or "family" not in c:
        raise ConfigFileError("[copula] needs a 'family' entry")
    if "theta" in c:
        theta = c["theta"]
    elif "alpha" in c:
        theta = c["alpha"]
    elif "rho" in c and "nu" in c:
        theta = (c["rho"], c["nu"])
    else:
        raise ConfigFileError("[copula] needs 'theta', 'alpha', or 'rho' and 'nu'")
    theta = tuple(theta) if isinstance(theta, (list, tuple)) else theta
    return CopulaSpec(c["family"], theta, bool(c.get("survival", False)))


def _marginal_from_mapping(m: dict) -> ParametricMarginal:
    if isinstance(m, str):
        return ParametricMarginal.parse(m)
    if not isinstance(m, dict):
        raise ConfigFileError("[marginal] must be a table or a shorthand string")
    if "spec" in m:
        return ParametricMarginal.parse(m["spec"])
    if "family" not in m:
        raise ConfigFileError("[marginal] needs 'family' (and 'theta') or 'spec'")
    if "theta" not in m:
        return ParametricMarginal.parse(m["family"])
    return ParametricMarginal(m["family"], tuple(np.atleast_1d(m["theta"]).tolist()))


# ---------------------------------------------------------------------------
# One replication
# ---------------------------------------------------------------------------


def _fit_one(est: str, series, cfg: MCConfig, ts: FitResult | None) -> FitResult:
    fam = cfg.copula
    if est == "ideal":
        return ideal_mle(series, fam)
    if est == "two_step":
        return ts if ts is not None else two_step(series, fam)
    if est == "parametric":
        return parametric_mle(series, fam, cfg.marginal.family, ts)
    if est in _MIS_FAMILY:
        return parametric_mle(series, fam, _MIS_FAMILY[est], ts)
    return sieve_mle(series, fam, cfg.sieve, ts)


def run_replication(cfg: MCConfig, rep: int) -> dict:
    """Simulate replication ``rep`` and fit every estimator to it.

    Returns a plain dict (picklable and JSON-friendly): per-estimator fit
    records or error messages, plus the sample range.
    """
    series = simulate_chain(cfg.sim_config(rep))
    ts = None
    fits, errors = {}, {}
    try:
        ts = two_step(series, cfg.copula)
    except CKMError as exc:
        errors["two_step"] = f"{type(exc).__name__}: {exc}"
    for est in cfg.estimators:
        if est == "two_step" and ts is None:
            continue
        try:
            f = _fit_one(est, series, cfg, ts)
        except (CKMError, FloatingPointError) as exc:
            errors[est] = f"{type(exc).__name__}: {exc}"
            continue
        if not f.converged:
            errors[est] = f"not converged (gradient norm {f.gradient_norm:.3g})"
            continue
        fits[est] = f.to_dict()
    y = series.values
    return {"rep": rep, "fits": fits, "errors": {k: v for k, v in errors.items() if k in cfg.estimators},
            "y_min": float(np.min(y)), "y_max": float(np.max(y))}


def _worker(args):
    cfg, rep = args
    return run_replication(cfg, rep)


def worker_count() -> int:
    """Worker-pool size: ``CKM_THREADS`` if set, else the CPU count."""
    raw = os.environ.get("CKM_THREADS")
    if raw is None or raw.strip() == "":
        return max(os.cpu_count() or 1, 1)
    try:
        val = int(raw)
    except ValueError:
        raise ConfigurationError(f"CKM_THREADS must be a positive integer, got {raw!r}") from None
    if val < 1:
        raise ConfigurationError(f"CKM_THREADS must be a positive integer, got {raw!r}")
    return val


def run_replications(cfg: MCConfig, workers: int | None = None) -> list[dict]:
    """All replications, in replication order."""
    workers = worker_count() if workers is None else int(workers)
    tasks = [(cfg, r) for r in range(cfg.reps)]
    if workers <= 1 or cfg.reps == 1:
        return [_worker(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, cfg.reps)) as pool:
        return list(pool.map(_worker, tasks, chunksize=max(1, cfg.reps // (4 * workers))))


# ---------------------------------------------------------------------------
# Summaries
# ---------------------------------------------------------------------------


def summarize_estimates(values, truth: float) -> dict:
    """Alpha-table cells for one estimator. Variance uses the 1/R convention
    so that ``MSE = bias^2 + var`` holds exactly."""
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        return {k: None for k in ALPHA_METRICS}
    mean = float(np.mean(x))
    bias = mean - truth
    var = float(np.mean((x - mean) ** 2))
    return {
        "mean": mean,
        "bias": bias,
        "bias2_x1e3": 1e3 * bias * bias,
        "var_x1e3": 1e3 * var,
        "mse_x1e3": 1e3 * (bias * bias + var),
        "q025": float(np.percentile(x, 2.5)),
        "q975": float(np.percentile(x, 97.5)),
    }


def _cdf_cells(values, p: float) -> dict:
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        return {k: None for k in CDF_METRICS}
    mean = float(np.mean(x))
    b2 = (mean - p) ** 2
    var = float(np.mean((x - mean) ** 2))
    return {"mean": mean, "bias2_x1e3": 1e3 * b2, "var_x1e3": 1e3 * var, "mse_x1e3": 1e3 * (b2 + var)}


def common_grid(supports, size: int = GRID_SIZE) -> np.ndarray:
    """``size`` equally spaced points on the intersection of the ranges."""
    lo = max(float(a) for a, _ in supports)
    hi = min(float(b) for _, b in supports)
    if not hi > lo:
        raise ExperimentError("empty common support for the conditional-quantile grid")
    return np.linspace(lo, hi, int(size))


def integrate_curves(grid, qhat, qtrue) -> tuple[float, float, float]:
    """Trapezoid integrals of squared bias, variance and MSE over ``grid``.

    ``qhat`` is ``(R, G)`` (one curve per replication), ``qtrue`` is ``(G,)``.
    Variances use the 1/R convention; values are not rescaled.
    """
    grid = np.asarray(grid, dtype=float)
    qhat = np.atleast_2d(np.asarray(qhat, dtype=float))
    qtrue = np.asarray(qtrue, dtype=float)
    mean = qhat.mean(axis=0)
    bias2 = (mean - qtrue) ** 2
    var = ((qhat - mean) ** 2).mean(axis=0)
    ib = float(_trapezoid(bias2, grid))
    iv = float(_trapezoid(var, grid))
    return ib, iv, ib + iv


def _marginal_for(est: str, fit: FitResult, cfg: MCConfig):
    return cfg.marginal if est == "ideal" else fit.marginal_hat


def integrated_quantile_metrics(cfg: MCConfig, fits, supports, estimator: str = "sieve"):
    """``(IntBias^2, IntVar, IntMSE) x 1e3`` for one estimator.

    ``fits`` are the estimator's per-replication :class:`FitResult` objects and
    ``supports`` the per-replication ``(min, max)`` of the simulated samples.
    """
    if cfg.cond_quantile is None:
        raise ConfigurationError("experiment has no conditional-quantile settings")
    cq = cfg.cond_quantile
    grid = common_grid(supports, cq.grid_size) if cq.y_grid == "auto" else np.asarray(cq.y_grid, float)
    qtrue = np.asarray(true_conditional_quantile(cfg.copula, cfg.marginal, cq.q, grid), dtype=float)
    curves = [np.asarray(conditional_quantile_hat(f, np.full(grid.size, cq.q), grid,
                                                  marginal=_marginal_for(estimator, f, cfg)), dtype=float)
              for f in fits]
    if not curves:
        return None
    ib, iv, im = integrate_curves(grid, np.vstack(curves), qtrue)
    return 1e3 * ib, 1e3 * iv, 1e3 * im


@dataclass(frozen=True)
class MCReport:
    """Summary tables plus raw per-replication estimates."""

    config: dict
    truth: float
    alpha: dict
    cdf: dict
    cond_quantile: dict | None
    failures: dict
    raw: dict

    def to_dict(self) -> dict:
        return {
            "config": self.config, "truth": self.truth, "alpha": self.alpha, "cdf": self.cdf,
            "cond_quantile": self.cond_quantile, "failures": self.failures, "raw": self.raw,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "MCReport":
        try:
            return cls(d["config"], d["truth"], d["alpha"], d["cdf"], d.get("cond_quantile"),
                       d["failures"], d["raw"])
        except KeyError as exc:
            raise ConfigFileError(f"report missing field {exc}") from None


def _pkey(p: float) -> str:
    return repr(float(p))


def summarize(cfg: MCConfig, results: list[dict]) -> MCReport:
    """Build the report from replication results (ordered by replication)."""
    truth = float(cfg.copula.theta[0])
    alpha, cdf, raw_alpha, raw_cdf, failures = {}, {}, {}, {}, {}
    fits_by_est = {}
    true_q = [float(cfg.marginal.quantile(p)) for p in cfg.quantile_probs]
    for est in cfg.estimators:
        fits, est_alpha, failed = [], [], []
        for res in results:
            rec = res["fits"].get(est)
            if rec is None:
                failed.append({"rep": res["rep"], "error": res["errors"].get(est, "missing")})
                est_alpha.append(None)
                continue
            f = FitResult.from_dict(rec)
            fits.append((res["rep"], f))
            est_alpha.append(f.alpha)
        rate = len(failed) / cfg.reps
        failures[est] = {"count": len(failed), "reps": failed}
        if rate > MAX_FAILURE_RATE:
            raise ExperimentError(f"{est}: {len(failed)} of {cfg.reps} replications failed "
                                  f"(limit {MAX_FAILURE_RATE:.0%})")
        ok = [a for a in est_alpha if a is not None]
        alpha[est] = summarize_estimates(ok, truth)
        raw_alpha[est] = est_alpha
        cdf[est], raw_cdf[est] = {}, {}
        for p, yq in zip(cfg.quantile_probs, true_q):
            vals = [float(np.asarray(_marginal_for(est, f, cfg).cdf(np.array([yq])))[0]) for _, f in fits]
            cdf[est][_pkey(p)] = _cdf_cells(vals, p)
            raw_cdf[est][_pkey(p)] = vals
        fits_by_est[est] = fits
    cq = None
    if cfg.cond_quantile is not None:
        supports = [(r["y_min"], r["y_max"]) for r in results]
        cq = {}
        for est in cfg.estimators:
            m = integrated_quantile_metrics(cfg, [f for _, f in fits_by_est[est]], supports, est)
            cq[est] = None if m is None else dict(zip(QUANTILE_METRICS, m))
    raw = {"alpha": raw_alpha, "cdf": raw_cdf}
    return MCReport(cfg.to_dict(), truth, alpha, cdf, cq, failures, raw)


def run_experiment(cfg: MCConfig, workers: int | None = None) -> MCReport:
    """Run all replications and summarize them (see module docstring)."""
    return summarize(cfg, run_replications(cfg, workers))


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def alpha_table_csv(report: MCReport) -> str:
    rows = [(est, m, _fmt(cells[m])) for est, cells in report.alpha.items() for m in ALPHA_METRICS]
    return _csv_text(("estimator", "metric", "value"), rows)


def cdf_table_csv(report: MCReport) -> str:
    rows = [(est, p, m, _fmt(cells[m]))
            for est, per_p in report.cdf.items() for p, cells in per_p.items() for m in CDF_METRICS]
    return _csv_text(("estimator", "prob", "metric", "value"), rows)


def quantile_table_csv(report: MCReport) -> str:
    rows = []
    for est, cells in (report.cond_quantile or {}).items():
        for m in QUANTILE_METRICS:
            rows.append((est, m, _fmt(None if cells is None else cells[m])))
    return _csv_text(("estimator", "metric", "value"), rows)


def write_report(report: MCReport, out_dir, formats=("csv", "json"), cfg: MCConfig | None = None) -> list[Path]:
    """Write ``alpha_table.csv``, ``cdf_table.csv``, ``quantile_table.csv``,
    ``report.json`` and, when ``cfg.traces > 0``, ``traces/rep####.csv``.

    Returns the written paths. I/O failures raise ``OSError`` naming the path.
    """
    out = Path(out_dir)
    written = []

    def put(path: Path, text: str):
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text, encoding="utf-8")
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
        written.append(path)

    formats = set(formats)
    if not formats <= {"csv", "json"}:
        raise ConfigurationError("formats must be a subset of {csv, json}")
    if "csv" in formats:
        put(out / "alpha_table.csv", alpha_table_csv(report))
        put(out / "cdf_table.csv", cdf_table_csv(report))
        put(out / "quantile_table.csv", quantile_table_csv(report))
    if "json" in formats:
        put(out / "report.json", report.to_json())
    if cfg is not None and cfg.traces > 0:
        for r in range(min(cfg.traces, cfg.reps)):
            s = simulate_chain(cfg.sim_config(r))
            path = out / "traces" / f"rep{r:04d}.csv"
            try:
                path.parent.mkdir(parents=True, exist_ok=True)
                s.to_csv(path)
            except OSError as exc:
                raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
            written.append(path)
    return written


__all__ = [
    "ALPHA_METRICS",
    "CDF_METRICS",
    "ESTIMATORS",
    "MAX_FAILURE_RATE",
    "QUANTILE_METRICS",
    "CondQuantileConfig",
    "MCConfig",
    "MCReport",
    "alpha_table_csv",
    "cdf_table_csv",
    "common_grid",
    "integrate_curves",
    "integrated_quantile_metrics",
    "quantile_table_csv",
    "run_experiment",
    "run_replication",
    "run_replications",
    "summarize",
    "summarize_estimates",
    "worker_count",
    "write_report",
]
