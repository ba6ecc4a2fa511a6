"""Acceptance criteria 1-10, one test each.

Each test records a one-line PASS/FAIL summary that the terminal report
prints under "acceptance criteria" (see conftest.py), then asserts.
Criteria 4-8 run desk-scale Monte Carlo designs from ``_studies`` and are
marked slow; with one CPU the whole module takes roughly half an hour.
"""

import json
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from _studies import design, lr_summary, run_design
from conftest import ACCEPTANCE
from ckm.copula import CopulaSpec, kendall_tau, kendall_tau_quadrature, tail_dependence
from ckm.simulate import clayton_drift_rho, drift_diagnostic, gumbel_drift_kappa, student_t_drift_ratio

TESTS = Path(__file__).parent


def _record(k: int, ok: bool, detail: str):
    ACCEPTANCE[k] = (bool(ok), detail)
    print(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")


def _var(report, est):
    return report.alpha[est]["var_x1e3"] / 1e3


def _mean(report, est):
    return report.alpha[est]["mean"]


# ---------------------------------------------------------------------------
# 1-3: closed forms and drift checks
# ---------------------------------------------------------------------------


CLAYTON_TABLE = {2.0: (0.500, 0.707), 5.0: (0.714, 0.871), 10.0: (0.833, 0.933), 12.0: (0.857, 0.944)}
GUMBEL_TABLE = {2.0: 0.5, 3.5: 0.714, 6.0: 0.833, 7.0: 0.857}


def test_criterion_01_dependence_measures():
    t0 = time.perf_counter()
    bad = []
    for a, (tau, lam) in CLAYTON_TABLE.items():
        s = CopulaSpec("clayton", a)
        if round(kendall_tau(s), 3) != tau or round(tail_dependence(s)[0], 3) != lam:
            bad.append(f"clayton {a}")
    for a, tau in GUMBEL_TABLE.items():
        if round(kendall_tau(CopulaSpec("gumbel", a)), 3) != tau:
            bad.append(f"gumbel {a}")
    dt = time.perf_counter() - t0
    ok = not bad and dt < 1.0
    _record(1, ok, f"tau/lambda table values to 3 decimals, mismatches={bad}, {dt:.3f}s")
    assert ok


TAU_MATRIX = [
    ("clayton", (0.5,)), ("clayton", (2.0,)), ("clayton", (5.0,)), ("clayton", (10.0,)), ("clayton", (12.0,)),
    ("gumbel", (1.5,)), ("gumbel", (2.0,)), ("gumbel", (3.5,)), ("gumbel", (6.0,)), ("gumbel", (7.0,)),
    ("frank", (-3.0,)), ("frank", (2.0,)), ("frank", (5.0,)),
    ("gaussian", (-0.5,)), ("gaussian", (0.3,)), ("gaussian", (0.7,)),
    ("efgm", (-0.6,)), ("efgm", (0.3,)), ("efgm", (0.9,)),
    ("studentt", (0.5, 3.0)), ("studentt", (-0.3, 5.0)), ("studentt", (0.7, 10.0)),
]


def test_criterion_02_quadrature_tau():
    t0 = time.perf_counter()
    errs = [abs(kendall_tau_quadrature(CopulaSpec(f, th)) - kendall_tau(CopulaSpec(f, th))) for f, th in TAU_MATRIX]
    dt = time.perf_counter() - t0
    worst = max(errs)
    ok = worst < 1e-4 and dt < 10.0
    _record(2, ok, f"max |tau_quad - tau_closed| = {worst:.2e} over {len(errs)} specs, {dt:.2f}s")
    assert ok


def test_criterion_03_drift():
    t0 = time.perf_counter()
    stats = {}
    for a in (1.5, 2.0, 3.5, 6.0, 7.0):
        stats[f"gumbel {a}"] = gumbel_drift_kappa(a)
        assert drift_diagnostic(CopulaSpec("gumbel", a)).passes
    for a in (2.0, 5.0, 10.0, 12.0):
        stats[f"clayton {a}"] = clayton_drift_rho(a)
        assert drift_diagnostic(CopulaSpec("clayton", a)).passes
    for rho, nu in ((0.5, 3.0), (0.9, 3.0), (0.5, 10.0)):
        stats[f"t {rho},{nu}"] = student_t_drift_ratio(rho, nu)
        assert drift_diagnostic(CopulaSpec("studentt", (rho, nu))).passes
    dt = time.perf_counter() - t0
    worst = max(stats.values())
    ok = worst < 1 and dt < 5.0
    _record(3, ok, f"largest drift statistic {worst:.4f} ({max(stats, key=stats.get)}), {dt:.2f}s")
    assert ok


# ---------------------------------------------------------------------------
# 4-8: Monte Carlo
# ---------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_04_gaussian_asymptotics():
    rep, dt = run_design("gaussian")
    n = design("gaussian").n
    v_ideal, v_2sp = n * _var(rep, "ideal"), n * _var(rep, "two_step")
    a = 0.5
    t_ideal, t_2sp = (1 - a * a) ** 2 / (1 + a * a), 1 - a * a
    ok = abs(v_ideal / t_ideal - 1) < 0.25 and abs(v_2sp / t_2sp - 1) < 0.25 and dt < 300
    _record(4, ok, f"n*Var ideal {v_ideal:.3f} (target {t_ideal:.3f}), two_step {v_2sp:.3f} "
                   f"(target {t_2sp:.3f}), {dt:.0f}s")
    assert ok


def _ordering(rep, slack=1.15):
    v = {e: _var(rep, e) for e in ("ideal", "parametric", "sieve", "two_step")}
    ok = v["ideal"] < slack * v["parametric"] and v["parametric"] < slack * v["sieve"] \
        and v["sieve"] < slack * v["two_step"]
    return ok, v


@pytest.mark.slow
def test_criterion_05_clayton_table():
    r2, dt2 = run_design("clayton2")
    r5, dt5 = run_design("clayton5")
    s2, s5 = _mean(r2, "sieve"), _mean(r5, "sieve")
    checks = {
        "sieve mean a=2": abs(s2 - 1.969) <= 0.08,
        "sieve mean a=5": abs(s5 - 4.849) <= 0.3,
        "two_step below sieve a=2": _mean(r2, "two_step") < s2,
        "two_step below sieve a=5": _mean(r5, "two_step") < s5,
    }
    o2, v2 = _ordering(r2)
    o5, v5 = _ordering(r5)
    checks["variance ordering a=2"] = o2
    checks["variance ordering a=5"] = o5
    checks["runtime"] = dt2 + dt5 < 1800
    ok = all(checks.values())
    fmt = lambda v: "/".join(f"{v[e]:.4f}" for e in ("ideal", "parametric", "sieve", "two_step"))  # noqa: E731
    _record(5, ok, f"sieve mean {s2:.3f} (a=2), {s5:.3f} (a=5); two_step {_mean(r2, 'two_step'):.3f}, "
                   f"{_mean(r5, 'two_step'):.3f}; var ideal/para/sieve/2sp a=2 {fmt(v2)}, a=5 {fmt(v5)}; "
                   f"{dt2 + dt5:.0f}s; failed={[k for k, v in checks.items() if not v]}")
    assert ok


@pytest.mark.slow
def test_criterion_06_gumbel_table():
    rep, dt = run_design("gumbel2")
    s, mn = _mean(rep, "sieve"), _mean(rep, "mis_normal")
    ok = abs(s - 2.002) <= 0.06 and mn - 2.0 > 0.2 and dt < 1800
    _record(6, ok, f"sieve mean {s:.3f} (target 2.002 +- 0.06), mis-normal bias {mn - 2.0:+.3f}, {dt:.0f}s")
    assert ok


@pytest.mark.slow
def test_criterion_07_conditional_quantile():
    rep, dt = run_design("clayton10")
    ms = rep.cond_quantile["sieve"]["int_mse_x1e3"]
    m2 = rep.cond_quantile["two_step"]["int_mse_x1e3"]
    ok = ms < m2 / 10
    _record(7, ok, f"IntMSE x1e3 sieve {ms:.2f}, two_step {m2:.2f}, ratio {m2 / ms:.1f}, {dt:.0f}s")
    assert ok


@pytest.mark.slow
def test_criterion_08_lr_coverage():
    t0 = time.perf_counter()
    covers, lr0 = lr_summary(200)
    dt = time.perf_counter() - t0
    cov = float(np.mean(covers))
    ok = 0.90 <= cov <= 0.99 and dt < 2700
    _record(8, ok, f"95% LR interval coverage {cov:.3f} over {covers.size} reps, mean LR {lr0.mean():.3f}, "
                   f"{dt:.0f}s (0s if already computed this session)")
    assert ok


# ---------------------------------------------------------------------------
# 9-10: property suites and determinism
# ---------------------------------------------------------------------------


PROPERTY_SUITES = ["test_copula.py", "test_marginal.py", "test_numerics.py", "test_simulate.py",
                   "test_inference.py"]


def test_criterion_09_property_suites():
    t0 = time.perf_counter()
    res = subprocess.run(
        [sys.executable, "-m", "pytest", "-q", "-m", "not slow", "-p", "no:cacheprovider",
         *[str(TESTS / f) for f in PROPERTY_SUITES]],
        capture_output=True, text=True, cwd=TESTS.parent,
    )
    dt = time.perf_counter() - t0
    tail = res.stdout.strip().splitlines()[-1] if res.stdout.strip() else res.stderr[-200:]
    ok = res.returncode == 0 and dt < 120
    _record(9, ok, f"{tail.strip('= ')} ({dt:.0f}s wall)")
    assert ok, res.stdout[-3000:]


MC_TOML = """
n = 300
reps = 6
burn_in = 300
estimators = ["sieve", "ideal", "two_step", "parametric"]

[copula]
family = "clayton"
alpha = 2.0

[marginal]
spec = "t3"

[sieve]
K_grid = [3, 4, 5]
"""


def test_criterion_10_determinism(tmp_path):
    cfg = tmp_path / "exp.toml"
    cfg.write_text(MC_TOML)
    blobs = []
    for threads in ("1", "2"):
        out = tmp_path / f"out{threads}"
        env = {**os.environ, "CKM_THREADS": threads}
        res = subprocess.run([sys.executable, "-m", "ckm", "mc", "--config", str(cfg), "--out-dir", str(out),
                              "--seed", "99"], capture_output=True, text=True, env=env)
        assert res.returncode == 0, res.stderr
        blobs.append((out / "report.json").read_bytes())
    ok = blobs[0] == blobs[1]
    n_reps = len(json.loads(blobs[0])["raw"]["alpha"]["sieve"])
    _record(10, ok, f"report.json byte-identical with CKM_THREADS=1 and 2 ({n_reps} reps, {len(blobs[0])} bytes)")
    assert ok
