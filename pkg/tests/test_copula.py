import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special

from ckm.copula import (
    CopulaSpec,
    clamp_pseudo,
    conditional_cdf,
    conditional_quantile,
    copula_cdf,
    density,
    fisher_information_quadrature,
    kendall_tau,
    kendall_tau_quadrature,
    log_density,
    log_density_derivatives,
    score_bundle,
    sigma_ideal_closed_form,
    spearman_rho,
    survival_transform,
    tail_dependence,
    tau_to_spec,
)
from ckm.errors import DomainError, UnsupportedError
from ckm.numerics import RngStream, gauss_legendre, graded_rule

MATRIX = [
    ("clayton", (0.5,)), ("clayton", (2.0,)), ("clayton", (5.0,)),
    ("gumbel", (1.5,)), ("gumbel", (2.0,)), ("gumbel", (3.5,)),
    ("frank", (-3.0,)), ("frank", (2.0,)), ("frank", (5.0,)),
    ("gaussian", (-0.5,)), ("gaussian", (0.3,)), ("gaussian", (0.7,)),
    ("efgm", (-0.6,)), ("efgm", (0.3,)), ("efgm", (0.9,)),
    ("studentt", (0.5, 3.0)), ("studentt", (-0.3, 5.0)), ("studentt", (0.7, 10.0)),
]
SPECS = [CopulaSpec(f, t) for f, t in MATRIX]
SPECS_WITH_SURVIVAL = SPECS + [CopulaSpec(f, t, survival=True) for f, t in MATRIX[::3]]
IDS = [f"{s.family}{'-s' if s.survival else ''}{s.theta}" for s in SPECS_WITH_SURVIVAL]
INDEPENDENCE = [
    CopulaSpec("clayton", 0.0), CopulaSpec("gumbel", 1.0), CopulaSpec("frank", 0.0),
    CopulaSpec("gaussian", 0.0), CopulaSpec("efgm", 0.0),
]


class TestSpec:
    def test_scalar_promotion_and_alias(self):
        s = CopulaSpec("Normal", 0.4)
        assert s.family == "gaussian" and s.theta == (0.4,)

    @pytest.mark.parametrize(
        "family,theta",
        [("clayton", -1.0), ("gumbel", 0.9), ("gaussian", 1.0), ("efgm", 1.2),
         ("studentt", (0.5, 1.5)), ("studentt", (1.0, 4.0)), ("studentt", 0.5), ("frank", np.inf)],
    )
    def test_domain_errors(self, family, theta):
        with pytest.raises(DomainError):
            CopulaSpec(family, theta)

    def test_unknown_family(self):
        with pytest.raises(DomainError):
            CopulaSpec("joe", 2.0)

    def test_dict_round_trip(self):
        s = CopulaSpec("studentt", (0.3, 4.0), survival=True)
        assert CopulaSpec.from_dict(s.to_dict()) == s

    @pytest.mark.parametrize("spec", SPECS, ids=IDS[: len(SPECS)])
    def test_free_round_trip(self, spec):
        x = spec.to_free()
        assert spec.from_free(x).theta == pytest.approx(spec.theta, rel=1e-12)
        # jacobian matches finite differences of the inverse map
        eps = 1e-6
        for i in range(len(x)):
            xp, xm = x.copy(), x.copy()
            xp[i] += eps
            xm[i] -= eps
            fd = (spec.from_free(xp).theta[i] - spec.from_free(xm).theta[i]) / (2 * eps)
            assert spec.free_jacobian(x)[i] == pytest.approx(fd, rel=1e-6)


class TestCdf:
    def test_clayton_formula(self):
        assert copula_cdf(CopulaSpec("clayton", 2.0), 0.5, 0.5) == pytest.approx(7**-0.5, rel=1e-14)

    def test_clayton_independence_limit(self):
        assert copula_cdf(CopulaSpec("clayton", 1e-9), 0.3, 0.6) == pytest.approx(0.18, abs=1e-8)
        assert copula_cdf(CopulaSpec("clayton", 0.0), 0.3, 0.6) == pytest.approx(0.18, abs=1e-15)

    def test_student_t_against_density_quadrature(self):
        rho, nu = 0.5, 3.0
        spec = CopulaSpec("studentt", (rho, nu))
        assert copula_cdf(spec, 0.5, 0.5) == pytest.approx(0.25 + math.asin(rho) / (2 * math.pi), abs=1e-7)

        def f2(y, x):
            q = (x * x - 2 * rho * x * y + y * y) / (1 - rho * rho)
            return (1 + q / nu) ** (-(nu + 2) / 2) / (2 * math.pi * math.sqrt(1 - rho * rho))

        x1, x2 = special.stdtrit(nu, 0.3), special.stdtrit(nu, 0.8)
        ref = integrate.dblquad(f2, -np.inf, x1, -np.inf, x2, epsabs=1e-11)[0]
        assert copula_cdf(spec, 0.3, 0.8) == pytest.approx(ref, abs=1e-6)

    @pytest.mark.parametrize("spec", SPECS_WITH_SURVIVAL, ids=IDS)
    def test_frechet_bounds_and_margins(self, spec):
        g = np.linspace(0.05, 0.95, 7)
        u1, u2 = np.meshgrid(g, g)
        c = copula_cdf(spec, u1, u2)
        assert np.all(c >= np.maximum(u1 + u2 - 1, 0) - 1e-12)
        assert np.all(c <= np.minimum(u1, u2) + 1e-12)
        assert np.allclose(copula_cdf(spec, g, 1.0), g, atol=1e-12)
        assert np.allclose(copula_cdf(spec, 1.0, g), g, atol=1e-12)
        assert np.allclose(copula_cdf(spec, g, 0.0), 0.0)

    def test_out_of_range(self):
        with pytest.raises(DomainError):
            copula_cdf(CopulaSpec("clayton", 2.0), 1.2, 0.5)


class TestScores:
    def test_efgm_centre(self):
        b = score_bundle(CopulaSpec("efgm", 0.4), 0.5, 0.5)
        assert b.log_c == pytest.approx(0.0, abs=1e-15)
        assert b.d_alpha[0] == pytest.approx(0.0, abs=1e-15)

    @pytest.mark.parametrize("spec", INDEPENDENCE, ids=lambda s: s.family)
    def test_independence_has_no_u_scores(self, spec):
        g = np.linspace(0.05, 0.95, 5)
        u1, u2 = np.meshgrid(g, g)
        b = score_bundle(spec, u1, u2)
        assert np.allclose(b.log_c, 0.0, atol=1e-12)
        assert np.allclose(b.d_u1, 0.0, atol=1e-6)
        assert np.allclose(b.d_u2, 0.0, atol=1e-6)

    def test_boundary_rejected(self):
        with pytest.raises(DomainError):
            score_bundle(CopulaSpec("clayton", 2.0), 0.0, 0.5)

    def test_clamp(self):
        assert clamp_pseudo([0.0, 0.5, 1.0], 10).tolist() == [0.05, 0.5, 0.95]

    @pytest.mark.parametrize("spec", SPECS_WITH_SURVIVAL, ids=IDS)
    def test_derivatives_against_finite_differences(self, spec):
        d = spec.nparams
        g = np.linspace(0.1, 0.9, 5)
        u1, u2 = (a.ravel() for a in np.meshgrid(g, g))
        h = 1e-5

        def logc(theta, a, b):
            return np.asarray(log_density(spec.with_theta(theta), a, b))

        def grad(theta, a, b):
            return log_density_derivatives(spec.with_theta(theta), a, b, order=1)[1]

        val, g1, h2 = log_density_derivatives(spec, u1, u2, order=2)
        theta = np.array(spec.theta)
        fd1 = []
        fd2 = []
        for i in range(d + 2):
            if i < d:
                tp, tm = theta.copy(), theta.copy()
                tp[i] += h
                tm[i] -= h
                args_p, args_m = (tp, u1, u2), (tm, u1, u2)
            elif i == d:
                args_p, args_m = (theta, u1 + h, u2), (theta, u1 - h, u2)
            else:
                args_p, args_m = (theta, u1, u2 + h), (theta, u1, u2 - h)
            fd1.append((logc(*args_p) - logc(*args_m)) / (2 * h))
            fd2.append((grad(*args_p) - grad(*args_m)) / (2 * h))
        fd1 = np.array(fd1)
        fd2 = np.array(fd2)  # fd2[i, j] = d/dvar_i of grad_j
        assert np.allclose(g1, fd1, rtol=1e-4, atol=1e-6)
        assert np.allclose(h2, fd2, rtol=1e-4, atol=1e-5)
        # symmetry of the Hessian
        assert np.allclose(h2, np.swapaxes(h2, 0, 1), rtol=1e-10, atol=1e-10)

    def test_clayton_bundle_fields(self):
        spec = CopulaSpec("clayton", 2.0)
        b = score_bundle(spec, 0.3, 0.7)
        a = 2.0
        logc = math.log(1 + a) - (1 + a) * math.log(0.21) - (2 + 1 / a) * math.log(0.3**-a + 0.7**-a - 1)
        assert b.log_c == pytest.approx(logc, rel=1e-13)
        hh = 1e-5
        fd = (log_density(spec.with_theta(a + hh), 0.3, 0.7) - log_density(spec.with_theta(a - hh), 0.3, 0.7)) / (2 * hh)
        assert b.d_alpha[0] == pytest.approx(fd, rel=1e-5)
        assert b.d2_u_u.shape == (2, 2)
        assert b.d2_u_alpha[0].shape == (1,)


class TestConditional:
    def test_clayton_value(self):
        assert conditional_cdf(CopulaSpec("clayton", 2.0), 0.5, 0.5) == pytest.approx(8 * 7**-1.5, rel=1e-13)

    def test_clayton_quantile_formula(self):
        a, q, u = 2.0, 0.3, 0.6
        ref = ((q ** (-a / (1 + a)) - 1) * u**-a + 1) ** (-1 / a)
        assert conditional_quantile(CopulaSpec("clayton", a), q, u) == pytest.approx(ref, rel=1e-13)

    @pytest.mark.parametrize("spec", INDEPENDENCE, ids=lambda s: s.family)
    def test_independence(self, spec):
        assert conditional_cdf(spec, 0.37, 0.8) == pytest.approx(0.37)
        assert conditional_quantile(spec, 0.37, 0.8) == pytest.approx(0.37)

    def test_gumbel_round_trip(self):
        spec = CopulaSpec("gumbel", 2.0)
        w = conditional_quantile(spec, 0.7, 0.4)
        assert conditional_cdf(spec, w, 0.4) == pytest.approx(0.7, abs=1e-8)

    def test_student_t_closed_form_against_density_integral(self):
        # dC/du1 = int_{-inf}^{x_w} f2(x_u, y) dy / f_nu(x_u)
        rho, nu = 0.6, 4.0
        spec = CopulaSpec("studentt", (rho, nu))
        for u, w in [(0.2, 0.3), (0.5, 0.9), (0.85, 0.4)]:
            xu, xw = special.stdtrit(nu, u), special.stdtrit(nu, w)

            def f2(y):
                q = (xu * xu - 2 * rho * xu * y + y * y) / (1 - rho * rho)
                return (1 + q / nu) ** (-(nu + 2) / 2) / (2 * math.pi * math.sqrt(1 - rho * rho))

            fx = math.exp(special.gammaln((nu + 1) / 2) - special.gammaln(nu / 2)) / math.sqrt(nu * math.pi) * (1 + xu * xu / nu) ** (-(nu + 1) / 2)
            ref = integrate.quad(f2, -np.inf, xw, epsabs=1e-13)[0] / fx
            assert conditional_cdf(spec, w, u) == pytest.approx(ref, abs=1e-6)

    @pytest.mark.parametrize("spec", SPECS_WITH_SURVIVAL, ids=IDS)
    def test_monotone_and_endpoints(self, spec):
        w = np.linspace(0.0, 1.0, 50)
        for u in (0.05, 0.5, 0.95):
            h = conditional_cdf(spec, w, u)
            assert h[0] == 0.0 and h[-1] == 1.0
            assert np.all(np.diff(h) > 0)

    @pytest.mark.parametrize("spec", SPECS_WITH_SURVIVAL, ids=IDS)
    def test_round_trip_grid(self, spec):
        g = np.linspace(0.1, 0.9, 9)
        q, u = np.meshgrid(g, g)
        w = conditional_quantile(spec, q, u)
        assert np.max(np.abs(conditional_cdf(spec, w, u) - q)) < 1e-8
        assert np.all(np.diff(conditional_quantile(spec, g, 0.3)) > 0)

    @settings(max_examples=150, deadline=None)
    @given(
        fam=st.sampled_from(["clayton", "gumbel", "frank", "gaussian", "efgm"]),
        t=st.floats(0.05, 0.85),
        q=st.floats(1e-4, 1 - 1e-4),
        u=st.floats(1e-4, 1 - 1e-4),
        surv=st.booleans(),
    )
    def test_round_trip_property(self, fam, t, q, u, surv):
        spec = tau_to_spec(fam, t if fam != "efgm" else t / 5, survival=surv)
        w = conditional_quantile(spec, q, u)
        assert conditional_cdf(spec, w, u) == pytest.approx(q, abs=1e-8)


class TestDependence:
    @pytest.mark.parametrize("a,tau,lam", [(2, 0.5, 0.707), (5, 0.714, 0.871), (10, 0.833, 0.933), (12, 0.857, 0.944)])
    def test_clayton_header_values(self, a, tau, lam):
        spec = CopulaSpec("clayton", a)
        assert round(kendall_tau(spec), 3) == tau
        assert round(tail_dependence(spec)[0], 3) == lam
        assert tail_dependence(spec)[1] == 0.0

    @pytest.mark.parametrize("a,tau", [(2, 0.5), (3.5, 0.714), (6, 0.833), (7, 0.857)])
    def test_gumbel_header_values(self, a, tau):
        assert round(kendall_tau(CopulaSpec("gumbel", a)), 3) == tau

    @pytest.mark.parametrize("spec", SPECS_WITH_SURVIVAL, ids=IDS)
    def test_tau_quadrature(self, spec):
        assert abs(kendall_tau_quadrature(spec) - kendall_tau(spec)) < 1e-4

    def test_frank_tau_negative_symmetry(self):
        assert kendall_tau(CopulaSpec("frank", -5.0)) == pytest.approx(-kendall_tau(CopulaSpec("frank", 5.0)), abs=1e-12)

    def test_spearman(self):
        assert spearman_rho(CopulaSpec("efgm", 0.6)) == pytest.approx(0.2)
        # Frank has no closed form here: quadrature against the Debye representation
        a = 5.0
        d = lambda k: k / a**k * integrate.quad(lambda t: t**k / math.expm1(t), 0, a)[0]  # noqa: E731
        ref = 1 - 12 / a * (d(1) - d(2))
        assert spearman_rho(CopulaSpec("frank", a)) == pytest.approx(ref, abs=1e-6)

    def test_tails(self):
        assert tail_dependence(CopulaSpec("gaussian", 0.8)) == (0.0, 0.0)
        lam_l, lam_u = tail_dependence(CopulaSpec("gumbel", 2.0))
        assert lam_l == 0 and lam_u == pytest.approx(2 - math.sqrt(2))
        lo, up = tail_dependence(CopulaSpec("studentt", (0.5, 3.0)))
        assert lo == up == pytest.approx(2 * special.stdtr(4, -math.sqrt(4 * 0.5 / 1.5)), rel=1e-12)

    def test_monotone_limits(self):
        taus = [kendall_tau(CopulaSpec("clayton", a)) for a in np.linspace(0.1, 20, 40)]
        assert np.all(np.diff(taus) > 0)
        lam = [tail_dependence(CopulaSpec("gumbel", a))[1] for a in np.linspace(1.1, 20, 40)]
        assert np.all(np.diff(lam) > 0)
        lam_t = [tail_dependence(CopulaSpec("studentt", (0.5, nu)))[0] for nu in np.linspace(2, 60, 40)]
        assert np.all(np.diff(lam_t) < 0)


class TestSurvival:
    def test_involution(self):
        spec = CopulaSpec("clayton", 2.0)
        twice = survival_transform(survival_transform(spec))
        g = np.linspace(0.05, 0.95, 10)
        u1, u2 = np.meshgrid(g, g)
        assert twice == spec
        assert np.array_equal(copula_cdf(twice, u1, u2), copula_cdf(spec, u1, u2))

    def test_tail_swap(self):
        lo, up = tail_dependence(survival_transform(CopulaSpec("clayton", 2.0)))
        assert lo == 0.0 and round(up, 3) == 0.707

    def test_identity(self):
        spec = CopulaSpec("gumbel", 2.5)
        s = survival_transform(spec)
        assert copula_cdf(s, 0.2, 0.9) == pytest.approx(0.2 + 0.9 - 1 + copula_cdf(spec, 0.8, 0.1), abs=1e-15)
        assert density(s, 0.2, 0.9) == pytest.approx(density(spec, 0.8, 0.1), rel=1e-14)


class TestProperties:
    @pytest.mark.parametrize("spec", SPECS_WITH_SURVIVAL, ids=IDS)
    def test_density_normalization(self, spec):
        r = graded_rule()
        u1, u2 = np.meshgrid(r.nodes, r.nodes, indexing="ij")
        total = np.sum(np.outer(r.weights, r.weights) * density(spec, u1, u2))
        assert abs(total - 1) < 1e-6

    @pytest.mark.parametrize("spec", SPECS_WITH_SURVIVAL, ids=IDS)
    def test_uniform_margins(self, spec):
        r = graded_rule()
        for u1 in (0.1, 0.5, 0.9):
            assert abs(np.dot(r.weights, density(spec, np.full(r.nodes.size, u1), r.nodes)) - 1) < 1e-6


class TestSigmaIdeal:
    def test_gaussian(self):
        assert sigma_ideal_closed_form(CopulaSpec("gaussian", 0.0)) == 1.0
        assert sigma_ideal_closed_form(CopulaSpec("gaussian", 0.5)) == pytest.approx(1.25 / 0.5625)

    def test_efgm_limit_and_continuity(self):
        assert sigma_ideal_closed_form(CopulaSpec("efgm", 0.0)) == pytest.approx(1 / 9, rel=1e-15)
        # series branch below 0.05, dilogarithm branch above
        lo = sigma_ideal_closed_form(CopulaSpec("efgm", 0.05 * (1 - 1e-12)))
        hi = sigma_ideal_closed_form(CopulaSpec("efgm", 0.05))
        assert lo == pytest.approx(hi, rel=1e-10)
        assert sigma_ideal_closed_form(CopulaSpec("efgm", 1.0)) == pytest.approx(math.pi**2 / 8 - 1, rel=1e-12)

    @pytest.mark.parametrize("spec", [CopulaSpec("efgm", 0.5), CopulaSpec("efgm", -0.8), CopulaSpec("gaussian", 0.3)])
    def test_closed_forms_against_quadrature(self, spec):
        assert sigma_ideal_closed_form(spec) == pytest.approx(fisher_information_quadrature(spec)[0, 0], rel=1e-3)

    @pytest.mark.parametrize("a", [0.5, 2.0, 5.0, 10.0])
    def test_clayton_against_quadrature(self, a):
        spec = CopulaSpec("clayton", a)
        assert sigma_ideal_closed_form(spec) == pytest.approx(fisher_information_quadrature(spec, 300)[0, 0], rel=1e-5)

    def test_clayton_against_monte_carlo(self):
        spec = CopulaSpec("clayton", 2.0)
        n = 400_000
        u = RngStream(11, 0).uniforms(n)
        v = RngStream(11, 1).uniforms(n)
        w = conditional_quantile(spec, v, u)
        keep = (w > 0) & (w < 1)
        _, _, hess = log_density_derivatives(spec, u[keep], w[keep], order=2, wrt_u=False)
        mc = -np.mean(hess[0, 0])
        assert sigma_ideal_closed_form(spec) == pytest.approx(mc, rel=0.01)

    def test_unsupported(self):
        with pytest.raises(UnsupportedError):
            sigma_ideal_closed_form(CopulaSpec("gumbel", 2.0))

    def test_survival_invariance(self):
        a = sigma_ideal_closed_form(CopulaSpec("clayton", 2.0))
        b = sigma_ideal_closed_form(CopulaSpec("clayton", 2.0, survival=True))
        assert a == b
