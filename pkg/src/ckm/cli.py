"""Command-line interface: ``ckm {simulate,fit,infer,diagnose,mc}``.

Exit codes: 0 success, 2 usage or domain error (including unknown flags),
3 numerical or convergence failure, 4 I/O failure (missing input, unwritable
output), 5 malformed configuration file.

Every command that writes an output file also writes a sidecar
``<stem>.meta.json`` (``meta.json`` inside the output directory for ``mc``)
holding the resolved configuration and library version. Sidecars carry no
timestamps, so reruns with the same flags are byte-identical.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .copula import CopulaSpec
from .errors import CKMError, ConfigFileError, ConfigurationError
from .estimate import DEFAULT_K_GRID, FitResult, SieveConfig, _template, fit as run_fit
from .inference import (
    DEFAULT_K_NALPHA,
    _pseudo_u,
    conditional_quantile_hat,
    efficient_info,
    profile_lr_ci,
    sigma_G_from_u,
)
from .marginal import ParametricMarginal
from .mc import MCConfig, run_experiment, worker_count, write_report
from .simulate import DEFAULT_BURN_IN, SeriesSample, SimConfig, drift_diagnostic, simulate_chain

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3
EXIT_IO = 4
EXIT_CONFIG = 5


class _Parser(argparse.ArgumentParser):
    """Argument parser whose usage errors exit with code 2 and a one-line message."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class _Fmt(argparse.ArgumentDefaultsHelpFormatter, argparse.RawDescriptionHelpFormatter):
    pass


# ---------------------------------------------------------------------------
# Argument helpers
# ---------------------------------------------------------------------------


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _y_grid(text: str) -> list[float]:
    """``a,b,c`` or ``lo:hi:num``."""
    if ":" in text:
        try:
            lo, hi, num = text.split(":")
            return [float(v) for v in np.linspace(float(lo), float(hi), int(num))]
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected lo:hi:num, got {text!r}") from None
    return _float_list(text)


def _add_copula(p, required: bool = True):
    g = p.add_argument_group("copula")
    g.add_argument("--copula", required=required, metavar="FAMILY",
                   help="copula family: clayton, gumbel, frank, gaussian, efgm, studentt")
    g.add_argument("--alpha", type=float, default=None,
                   help="scalar copula parameter (dimensionless; not used by studentt)")
    g.add_argument("--rho", type=float, default=None, help="studentt correlation parameter in (-1, 1)")
    g.add_argument("--nu", type=float, default=None, help="studentt degrees of freedom (> 0)")
    g.add_argument("--survival", action="store_true", help="use the 180-degree rotated (survival) copula")


def _copula_spec(args) -> CopulaSpec:
    fam = args.copula
    if str(fam).lower() in ("studentt", "student_t", "student-t", "t"):
        if args.rho is None or args.nu is None:
            raise ConfigurationError("studentt copula needs --rho and --nu")
        return CopulaSpec(fam, (args.rho, args.nu), args.survival)
    if args.alpha is None:
        raise ConfigurationError(f"{fam} copula needs --alpha")
    return CopulaSpec(fam, (args.alpha,), args.survival)


def _write_text(path: Path, text: str):
    try:
        if path.parent and not path.parent.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _meta_path(out: Path) -> Path:
    return out.with_name(out.stem + ".meta.json")


def _write_meta(path: Path, command: str, config: dict):
    _write_text(path, _json({"command": command, "version": __version__, "config": config}))


def _read_series(path) -> SeriesSample:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"input file not found: {path}")
    return SeriesSample.from_csv(path)


def _read_fit(path) -> FitResult:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"fit file not found: {path}")
    try:
        return FitResult.from_dict(json.loads(path.read_text(encoding="utf-8")))
    except json.JSONDecodeError as exc:
        raise ConfigFileError(f"{path}: malformed JSON ({exc})") from None


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = SimConfig(_copula_spec(args), ParametricMarginal.parse(args.marginal), args.n,
                    args.burnin, args.seed, args.stream)
    s = simulate_chain(cfg)
    out = Path(args.out)
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        s.to_csv(out, include_u=not args.no_u)
    except OSError as exc:
        raise OSError(f"cannot write {out}: {exc.strerror or exc}") from exc
    meta = cfg.to_dict()
    meta["include_u"] = not args.no_u
    _write_meta(_meta_path(out), "simulate", meta)
    return EXIT_OK


def cmd_fit(args) -> int:
    series = _read_series(args.input)
    tmpl = _template(args.copula, args.survival)
    sieve = SieveConfig(args.basis, tuple(args.K_grid), args.reference)
    if args.method.replace("-", "_") == "ideal" and series.u_values is None:
        raise ConfigurationError("the ideal estimator needs a 'u' column in the input series")
    res = run_fit(args.method, series, tmpl, args.marginal_family, sieve)
    out = Path(args.out)
    _write_text(out, _json(res.to_dict()))
    _write_meta(_meta_path(out), "fit", {
        "method": args.method, "copula": {"family": tmpl.family, "survival": tmpl.survival},
        "input": str(args.input), "marginal_family": args.marginal_family, "sieve": sieve.to_dict(),
    })
    return EXIT_OK


def cmd_infer(args) -> int:
    fit = _read_fit(args.fit)
    out = Path(args.out) if args.out else None
    meta = {"fit": str(args.fit), "what": args.what, "input": args.input}
    if args.what == "quantile":
        if not args.q or not args.y_grid:
            raise ConfigurationError("--what quantile needs --q and --y-grid")
        rows = ["y,q,qhat"]
        for q in args.q:
            qh = np.atleast_1d(conditional_quantile_hat(fit, np.full(len(args.y_grid), q), np.asarray(args.y_grid)))
            rows += [f"{y!r},{q!r},{float(v)!r}" for y, v in zip(args.y_grid, qh)]
        text = "\n".join(rows) + "\n"
        meta.update(q=args.q, y_grid=args.y_grid)
    else:
        if args.input is None:
            raise ConfigurationError(f"--what {args.what} needs --input series.csv")
        series = _read_series(args.input)
        if args.what == "info":
            result = efficient_info(fit, series, args.K_nalpha).to_dict()
            meta["K_nalpha"] = args.K_nalpha
        elif args.what == "sigma-g":
            if args.y is None:
                raise ConfigurationError("--what sigma-g needs --y")
            G_y = float(np.asarray(fit.marginal_hat.cdf(np.asarray([args.y], float)))[0])
            val, ridge = sigma_G_from_u(fit.copula_hat, _pseudo_u(fit, series), G_y, args.K_nalpha)
            result = {"y": args.y, "G_hat": G_y, "sigma_G2": val, "ridge_used": ridge}
            meta.update(y=args.y, K_nalpha=args.K_nalpha)
        else:
            result = profile_lr_ci(series, fit=fit, level=args.level).to_dict()
            meta["level"] = args.level
        text = _json(result)
    if out is None:
        sys.stdout.write(text)
        return EXIT_OK
    _write_text(out, text)
    _write_meta(_meta_path(out), "infer", meta)
    return EXIT_OK


def cmd_diagnose(args) -> int:
    spec = _copula_spec(args)
    text = _json(drift_diagnostic(spec).to_dict())
    if args.out is None:
        sys.stdout.write(text)
        return EXIT_OK
    out = Path(args.out)
    _write_text(out, text)
    _write_meta(_meta_path(out), "diagnose", {"copula": spec.to_dict()})
    return EXIT_OK


def cmd_mc(args) -> int:
    path = Path(args.config)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    cfg = MCConfig.from_toml(path)
    overrides = {"base_seed": args.seed}
    if args.reps is not None:
        overrides["reps"] = args.reps
    cfg = MCConfig.from_dict({**cfg.to_dict(), **overrides})
    workers = worker_count()
    report = run_experiment(cfg, workers)
    out = Path(args.out_dir)
    write_report(report, out, formats=tuple(args.formats), cfg=cfg)
    _write_meta(out / "meta.json", "mc", cfg.to_dict())
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser and dispatch
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ckm", description=__doc__.split("\n\n")[0], formatter_class=_Fmt)
    p.add_argument("--version", action="version", version=f"ckm {__version__}")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("simulate", help="simulate a stationary copula Markov chain", formatter_class=_Fmt,
                       description="Write a simulated series as CSV with header t,y,u.")
    _add_copula(s)
    s.add_argument("--marginal", default="t3",
                   help="invariant distribution: tNU, normal[:loc,scale], ev[:loc,scale], lst:nu,loc,scale")
    s.add_argument("--n", type=int, default=1000, help="series length (observations)")
    s.add_argument("--burnin", "--burn-in", dest="burnin", type=int, default=DEFAULT_BURN_IN,
                   help="discarded initial steps (observations)")
    s.add_argument("--seed", type=int, required=True, help="base random seed (required, integer)")
    s.add_argument("--stream", type=int, default=0, help="independent substream index (integer)")
    s.add_argument("--no-u", action="store_true", help="omit the latent uniform column u")
    s.add_argument("--out", required=True, help="output CSV path")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="estimate the copula parameter and marginal", formatter_class=_Fmt,
                       description="Fit one estimator to a series; writes the full fit record as JSON.")
    f.add_argument("--method", required=True, choices=("sieve", "two-step", "ideal", "parametric"),
                   help="estimator (ideal needs the latent u column)")
    f.add_argument("--copula", required=True, metavar="FAMILY", help="copula family")
    f.add_argument("--survival", action="store_true", help="use the survival (rotated) copula")
    f.add_argument("--marginal-family", default="studentt",
                   help="parametric method only: studentt, lst, normal or extreme_value")
    f.add_argument("--basis", default="polynomial", help="sieve basis: polynomial, cosine, bspline")
    f.add_argument("--K-grid", dest="K_grid", type=_int_list, default=list(DEFAULT_K_GRID),
                   help="candidate sieve dimensions (comma-separated integers)")
    f.add_argument("--reference", default="auto",
                   help="sieve reference map: auto, tNU, normal, logistic, optional (loc,scale) suffix")
    f.add_argument("--input", required=True, help="series CSV (columns t,y[,u])")
    f.add_argument("--out", required=True, help="output JSON path")
    f.set_defaults(func=cmd_fit)

    i = sub.add_parser("infer", help="inference from a saved fit", formatter_class=_Fmt,
                       description="info: efficient information; sigma-g: asymptotic variance of the "
                                   "marginal CDF estimate; lr-ci: profile likelihood-ratio interval "
                                   "(sieve fits); quantile: conditional quantiles as CSV y,q,qhat.")
    i.add_argument("--fit", required=True, help="fit JSON written by 'ckm fit'")
    i.add_argument("--what", required=True, choices=("info", "sigma-g", "lr-ci", "quantile"),
                   help="quantity to compute")
    i.add_argument("--input", default=None, help="series CSV the fit was computed from (info, sigma-g, lr-ci)")
    i.add_argument("--K-nalpha", dest="K_nalpha", type=int, default=DEFAULT_K_NALPHA,
                   help="cosine functions per nuisance direction (integer)")
    i.add_argument("--y", type=float, default=None, help="sigma-g evaluation point (data units)")
    i.add_argument("--level", type=float, default=0.95, help="lr-ci confidence level (probability)")
    i.add_argument("--q", type=_float_list, default=None, help="quantile levels in (0, 1), comma-separated")
    i.add_argument("--y-grid", dest="y_grid", type=_y_grid, default=None,
                   help="conditioning values (data units): a,b,c or lo:hi:num; write --y-grid=-1:1:5 "
                        "when the first value is negative")
    i.add_argument("--out", default=None, help="output path (stdout when omitted)")
    i.set_defaults(func=cmd_infer)

    d = sub.add_parser("diagnose", help="drift check for geometric ergodicity", formatter_class=_Fmt,
                       description="Evaluate the drift statistic of a copula; writes a JSON report.")
    _add_copula(d)
    d.add_argument("--out", default=None, help="output JSON path (stdout when omitted)")
    d.set_defaults(func=cmd_diagnose)

    m = sub.add_parser("mc", help="run a Monte Carlo experiment", formatter_class=_Fmt,
                       description="Run the estimator comparison described by a TOML file. "
                                   "CKM_THREADS caps the worker pool (default: CPU count).")
    m.add_argument("--config", required=True, help="experiment TOML file")
    m.add_argument("--out-dir", required=True, help="output directory")
    m.add_argument("--seed", type=int, required=True, help="base random seed (required; overrides base_seed)")
    m.add_argument("--reps", type=int, default=None, help="override the number of replications")
    m.add_argument("--formats", type=lambda t: [v.strip() for v in t.split(",") if v.strip()],
                   default=["csv", "json"], help="output formats: csv, json (comma-separated)")
    m.set_defaults(func=cmd_mc)
    return p


def main(argv=None) -> int:
    """Parse ``argv`` and run the command; returns the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except Exception as exc:  # mapped to exit codes below
        code = _exit_code(exc)
        if code is None:
            raise
        sys.stderr.write(f"ckm {args.command}: error: {exc}\n")
        return code


def _exit_code(exc: Exception) -> int | None:
    if isinstance(exc, ConfigFileError):
        return EXIT_CONFIG
    if isinstance(exc, CKMError):
        return exc.exit_code
    if isinstance(exc, OSError):
        return EXIT_IO
    if isinstance(exc, FloatingPointError):
        return EXIT_NUMERIC
    if isinstance(exc, (ValueError, TypeError, KeyError)):
        return EXIT_USAGE
    return None


__all__ = ["EXIT_CONFIG", "EXIT_IO", "EXIT_NUMERIC", "EXIT_OK", "EXIT_USAGE", "build_parser", "main"]
