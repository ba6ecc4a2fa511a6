import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special, stats

from ckm.copula import CopulaSpec, conditional_quantile, kendall_tau
from ckm.errors import ConfigurationError, DomainError, SimulationError
from ckm.marginal import ParametricMarginal
from ckm.numerics import RngStream
from ckm.simulate import (
    DriftReport,
    SeriesSample,
    SimConfig,
    clayton_drift_rho,
    drift_diagnostic,
    gumbel_drift_kappa,
    kolmogorov_sf,
    ks_two_sample,
    ks_uniform,
    latent_path,
    latent_paths,
    simulate_chain,
)

T3 = ParametricMarginal("studentt", (3.0,))

CHAIN_MATRIX = [
    CopulaSpec("clayton", 2.0),
    CopulaSpec("clayton", 5.0),
    CopulaSpec("clayton", 12.0),
    CopulaSpec("clayton", 5.0, survival=True),
    CopulaSpec("gumbel", 2.0),
    CopulaSpec("gumbel", 6.0),
    CopulaSpec("frank", 5.0),
    CopulaSpec("frank", -4.0),
    CopulaSpec("gaussian", 0.5),
    CopulaSpec("gaussian", -0.6),
    CopulaSpec("efgm", 0.8),
    CopulaSpec("studentt", (0.5, 3.0)),
    CopulaSpec("studentt", (0.9, 5.0)),
]
IDS = [f"{s.family}{'-surv' if s.survival else ''}-{'-'.join(f'{t:g}' for t in s.theta)}" for s in CHAIN_MATRIX]


class TestConfig:
    def test_valid(self):
        cfg = SimConfig(CopulaSpec("clayton", 2.0), T3, 1000)
        assert cfg.burn_in == 2000

    @pytest.mark.parametrize("kw", [{"n": 1}, {"n": 2.5}, {"burn_in": -1}, {"seed": -3}, {"stream_id": -1}])
    def test_invalid(self, kw):
        args = {"copula": CopulaSpec("clayton", 2.0), "marginal": T3, "n": 10}
        args.update(kw)
        with pytest.raises(ConfigurationError):
            SimConfig(**args)


class TestChain:
    def test_length_and_reproducible(self):
        cfg = SimConfig(CopulaSpec("clayton", 2.0), T3, 1000, 2000, seed=7, stream_id=3)
        a, b = simulate_chain(cfg), simulate_chain(cfg)
        assert a.n == 1000
        assert a.values.tobytes() == b.values.tobytes()
        assert np.all((a.u_values > 0) & (a.u_values < 1))

    def test_streams_differ(self):
        base = dict(copula=CopulaSpec("clayton", 2.0), marginal=T3, n=100, burn_in=10, seed=7)
        a = simulate_chain(SimConfig(stream_id=0, **base))
        b = simulate_chain(SimConfig(stream_id=1, **base))
        assert not np.array_equal(a.values, b.values)

    def test_burn_in_discards_prefix(self):
        spec = CopulaSpec("gumbel", 2.0)
        long = simulate_chain(SimConfig(spec, T3, 300, burn_in=0, seed=5))
        v = RngStream(5).uniforms(300)
        np.testing.assert_array_equal(long.u_values, latent_path(spec, v))
        # burn-in uses the same stream: the kept part is the tail of the full path
        short = simulate_chain(SimConfig(spec, T3, 100, burn_in=200, seed=5))
        np.testing.assert_array_equal(short.u_values, long.u_values[200:])

    def test_marginal_transform(self):
        s = simulate_chain(SimConfig(CopulaSpec("frank", 3.0), T3, 200, 50, seed=2))
        np.testing.assert_allclose(s.values, T3.quantile(s.u_values), rtol=0, atol=0)

    @pytest.mark.parametrize("spec", CHAIN_MATRIX, ids=IDS)
    def test_step_is_conditional_quantile(self, spec):
        v = RngStream(21).uniforms(60)
        u = latent_path(spec, v)
        ref = np.asarray(conditional_quantile(spec, v[1:], u[:-1]))
        np.testing.assert_allclose(u[1:], ref, atol=1e-9)

    def test_independence_is_iid(self):
        s = simulate_chain(SimConfig(CopulaSpec("clayton", 0.0), T3, 2000, 100, seed=3))
        direct = T3.quantile(RngStream(3, 99).uniforms(2000))
        assert ks_two_sample(s.values, direct).pvalue > 0.01

    @pytest.mark.parametrize("rho,nu", [(0.5, 3.0), (0.9, 3.0), (-0.7, 8.0)])
    def test_student_t_recursion_matches_quantile_path(self, rho, nu):
        spec = CopulaSpec("studentt", (rho, nu))
        v = RngStream(13).uniforms(3000)
        np.testing.assert_allclose(latent_path(spec, v, "recursion"), latent_path(spec, v, "quantile"), atol=1e-8)

    def test_recursion_only_for_student_t(self):
        with pytest.raises(ConfigurationError):
            latent_path(CopulaSpec("clayton", 2.0), RngStream(1).uniforms(10), "recursion")

    @pytest.mark.parametrize("spec", CHAIN_MATRIX, ids=IDS)
    def test_lag1_kendall_tau(self, spec):
        s = simulate_chain(SimConfig(spec, T3, 5000, 2000, seed=42))
        tau = stats.kendalltau(s.u_values[:-1], s.u_values[1:])[0]
        assert abs(tau - kendall_tau(spec)) < 0.05

    @pytest.mark.parametrize(
        "spec",
        [CopulaSpec("clayton", 12.0), CopulaSpec("clayton", 5.0, True), CopulaSpec("gumbel", 3.5),
         CopulaSpec("frank", 8.0), CopulaSpec("studentt", (0.9, 3.0)), CopulaSpec("efgm", -0.9)],
        ids=["clayton12", "surv-clayton5", "gumbel3.5", "frank8", "t0.9", "efgm"],
    )
    def test_pooled_states_are_uniform(self, spec):
        # terminal states of independent chains are i.i.d. draws from the
        # invariant law, so the KS null holds exactly
        v = RngStream(77).uniforms(301 * 2000).reshape(301, 2000)
        u = latent_paths(spec, v)[-1]
        assert ks_uniform(u).pvalue > 0.01

    def test_latent_paths_match_single(self):
        spec = CopulaSpec("clayton", 3.0, True)
        v = RngStream(4).uniforms(50 * 3).reshape(50, 3)
        many = latent_paths(spec, v)
        for j in range(3):
            np.testing.assert_allclose(many[:, j], latent_path(spec, v[:, j]), atol=1e-12)
        tspec = CopulaSpec("studentt", (0.6, 4.0))
        many = latent_paths(tspec, v)
        np.testing.assert_allclose(many[:, 1], latent_path(tspec, v[:, 1]), atol=1e-12)

    def test_survival_clayton_clusters_in_upper_tail(self):
        def upper_concordance(u, thr=0.95):
            prev, nxt = u[:-1] > thr, u[1:] > thr
            return np.sum(prev & nxt) / max(np.sum(prev), 1)

        base = simulate_chain(SimConfig(CopulaSpec("clayton", 5.0), T3, 5000, 2000, seed=8))
        surv = simulate_chain(SimConfig(CopulaSpec("clayton", 5.0, True), T3, 5000, 2000, seed=8))
        assert upper_concordance(surv.u_values) > upper_concordance(base.u_values)
        lower = lambda u: np.sum((u[:-1] < 0.05) & (u[1:] < 0.05)) / max(np.sum(u[:-1] < 0.05), 1)  # noqa: E731
        assert lower(base.u_values) > lower(surv.u_values)

    def test_extreme_parameter_stays_in_range(self):
        s = simulate_chain(SimConfig(CopulaSpec("clayton", 30.0), ParametricMarginal("normal", (0, 1)), 2000, 500, seed=1))
        assert np.all(np.isfinite(s.values))

    def test_failure_reports_step(self, monkeypatch):
        import ckm.simulate as sim

        calls = {"n": 0}

        def bad_step(alpha):
            def step(v, u):
                calls["n"] += 1
                return math.nan if calls["n"] == 5 else v

            return step

        monkeypatch.setattr(sim, "_clayton_step", bad_step)
        with pytest.raises(SimulationError) as exc:
            sim.latent_path(CopulaSpec("clayton", 2.0), RngStream(1).uniforms(20))
        assert exc.value.step == 5

    def test_bad_innovations(self):
        with pytest.raises(DomainError):
            latent_path(CopulaSpec("clayton", 2.0), np.array([0.5, 1.0]))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32), stream=st.integers(0, 1000), alpha=st.floats(0.1, 15.0))
def test_chain_deterministic_property(seed, stream, alpha):
    cfg = SimConfig(CopulaSpec("clayton", alpha), T3, 50, 20, seed, stream)
    a, b = simulate_chain(cfg), simulate_chain(cfg)
    assert a.values.tobytes() == b.values.tobytes()
    assert np.all((a.u_values > 0) & (a.u_values < 1))


class TestSeriesIO:
    def test_csv_round_trip(self, tmp_path):
        s = simulate_chain(SimConfig(CopulaSpec("gumbel", 2.0), T3, 50, 10, seed=1))
        p = tmp_path / "s.csv"
        s.to_csv(p)
        assert p.read_text().splitlines()[0] == "t,y,u"
        back = SeriesSample.from_csv(p)
        assert back.values.tobytes() == s.values.tobytes()
        assert back.u_values.tobytes() == s.u_values.tobytes()

    def test_csv_without_u(self, tmp_path):
        p = tmp_path / "s.csv"
        SeriesSample(np.array([1.0, 2.0, 3.0])).to_csv(p)
        assert p.read_text().splitlines()[0] == "t,y"
        assert SeriesSample.from_csv(p).u_values is None

    def test_malformed(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("t,z\n1,2\n")
        with pytest.raises(DomainError):
            SeriesSample.from_csv(p)
        p.write_text("t,y\n1,abc\n2,3\n")
        with pytest.raises(DomainError):
            SeriesSample.from_csv(p)

    def test_invalid_series(self):
        with pytest.raises(DomainError):
            SeriesSample(np.array([1.0]))
        with pytest.raises(DomainError):
            SeriesSample(np.array([1.0, np.nan]))


class TestKS:
    def test_kolmogorov_sf_known(self):
        # P(K > 1.36) ~ 0.049, the classical 5% point
        assert kolmogorov_sf(1.3581) == pytest.approx(0.05, abs=5e-4)
        assert kolmogorov_sf(0.0) == 1.0

    def test_against_scipy(self):
        g = RngStream(5).generator()
        u = g.uniform(size=400) ** 1.1
        ours = ks_uniform(u)
        ref = stats.kstest(u, "uniform", method="asymp")
        assert ours.statistic == pytest.approx(ref.statistic, abs=1e-14)
        assert ours.pvalue == pytest.approx(ref.pvalue, rel=0.1)
        a, b = g.normal(size=300), g.normal(0.2, size=500)
        ours2 = ks_two_sample(a, b)
        ref2 = stats.ks_2samp(a, b, method="asymp")
        assert ours2.statistic == pytest.approx(ref2.statistic, abs=1e-14)
        assert ours2.pvalue == pytest.approx(ref2.pvalue, rel=0.1)


class TestDrift:
    def test_gumbel_two(self):
        r = drift_diagnostic(CopulaSpec("gumbel", 2.0))
        assert r.statistic == pytest.approx(0.5 * special.beta(0.75, 0.75), rel=1e-14)
        assert r.passes

    @pytest.mark.parametrize("alpha", [0.5, 2.0, 5.0, 10.0, 12.0])
    def test_clayton_against_beta_closed_form(self, alpha):
        # t = v^{-b} - 1 maps the expectation onto a beta integral:
        # E[(V^{-b} - 1)^p] = B(p + 1, 1/b - p) / b with b = alpha / (1 + alpha)
        b, p = alpha / (1 + alpha), 1 / (2 * alpha)
        closed = special.beta(p + 1, 1 / b - p) / b
        assert clayton_drift_rho(alpha) == pytest.approx(closed, rel=1e-9)

    @pytest.mark.parametrize("alpha", [1.5, 2.0, 3.5, 6.0, 7.0])
    def test_gumbel_passes(self, alpha):
        assert drift_diagnostic(CopulaSpec("gumbel", alpha)).passes is True

    @pytest.mark.parametrize("alpha", [2.0, 5.0, 10.0, 12.0])
    def test_clayton_passes(self, alpha):
        r = drift_diagnostic(CopulaSpec("clayton", alpha))
        assert r.passes is True and r.statistic < 1

    @pytest.mark.parametrize("rho,nu", [(0.5, 3.0), (0.9, 3.0), (0.5, 10.0)])
    def test_student_t_passes(self, rho, nu):
        r = drift_diagnostic(CopulaSpec("studentt", (rho, nu)))
        assert r.statistic == pytest.approx(math.sqrt(rho**2 + (1 - rho**2) / (nu - 1)))
        assert r.passes is True

    def test_student_t_gaussian_limit(self):
        assert drift_diagnostic(CopulaSpec("studentt", (0.6, 1e8))).statistic == pytest.approx(0.6, abs=1e-6)

    def test_student_t_boundary(self):
        # at nu = 2 the ratio reaches 1 exactly
        assert drift_diagnostic(CopulaSpec("studentt", (0.5, 2.0))).passes is False

    def test_independence(self):
        r = drift_diagnostic(CopulaSpec("clayton", 0.0))
        assert r.passes is True and "i.i.d." in r.note

    @pytest.mark.parametrize("spec", [CopulaSpec("frank", 3.0), CopulaSpec("gaussian", 0.3), CopulaSpec("efgm", 0.5)])
    def test_not_applicable(self, spec):
        r = drift_diagnostic(spec)
        assert r.passes is None and "not applicable" in r.note
        assert r.to_dict()["statistic"] is None

    def test_domain(self):
        with pytest.raises(DomainError):
            gumbel_drift_kappa(1.0)
        with pytest.raises(DomainError):
            clayton_drift_rho(0.0)

    def test_report_type(self):
        assert isinstance(drift_diagnostic(CopulaSpec("clayton", 2.0)), DriftReport)
