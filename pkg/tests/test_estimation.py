import numpy as np
import pytest

from perceptive_ra import estimation as est
from perceptive_ra.channel import DomainError, ObjectSpec, Role, ScenarioConfig, channel_gains
from perceptive_ra.estimation import (
    CrbModel, Criterion, SbpConfig, Waveform, crb_angle, crb_range, crb_velocity, effective_bandwidth_sq,
    initial_bandwidth, localization_objective, localization_sweep, sbp_ratio, sbp_sweep,
)
from perceptive_ra.harness import bundled_scenarios
from perceptive_ra.optim import Status, solve_batch
from perceptive_ra.tracking import crb_model_for

GAMMA = [1.0, 0.5, 2 / 3]


@pytest.fixture(scope="module")
def loc():
    sc = bundled_scenarios()["localization_default"]
    return sc, crb_model_for(sc)


@pytest.fixture(scope="module")
def sweep(loc):
    sc, model = loc
    return localization_sweep(sc, model, np.linspace(1.0, 7.0, 13), GAMMA)


def _comm_only(d1=90.0, d2=90.0):
    objs = [ObjectSpec(Role.COMM, d1, 20.0), ObjectSpec(Role.COMM, d2, -20.0)]
    return ScenarioConfig(objs, p_box=(4.0, 36.0), b_box=(10e6, 90e6), comm_array_gain=False)


class TestBandwidthAndBounds:
    def test_effective_bandwidth(self):
        assert effective_bandwidth_sq(2 * np.pi**2, 1.0) == pytest.approx(1.0)
        assert effective_bandwidth_sq(6.0, 1.0, Waveform.LFM) == pytest.approx(6.0)
        assert effective_bandwidth_sq(2e6, 1e-5) == pytest.approx(2 * effective_bandwidth_sq(1e6, 1e-5))
        with pytest.raises(DomainError):
            effective_bandwidth_sq(0.0, 1e-5)

    def test_unit_examples(self):
        m = CrbModel(beta1=1.0, beta2=1.0, beta3=1.0)
        assert crb_range(1.0, 1.0, 1.0, m) == 1.0
        assert crb_range(2.0, 1.0, 1.0, m) == 0.5
        assert crb_angle(1.0, 1.0, m) == 1.0
        assert crb_angle(4.0, 1.0, m) == 0.25
        assert crb_velocity(2.0, 1.0, m) == 0.5

    def test_zero_denominator_sentinel(self):
        m = CrbModel()
        assert crb_range(0.0, 1e6, 1.0, m) == np.inf
        assert crb_angle(1.0, 0.0, m) == np.inf
        np.testing.assert_array_equal(crb_range(np.array([0.0, 1.0]), 1.0, 1.0, m) == np.inf, [True, False])

    def test_range_monotone(self):
        m = CrbModel()
        assert crb_range(2.0, 3e6, 1e-3, m) < crb_range(1.0, 3e6, 1e-3, m)
        assert crb_range(1.0, 6e6, 1e-3, m) < crb_range(1.0, 3e6, 1e-3, m)

    def test_composed_gain_matches_monolithic(self, loc):
        sc, model = loc
        spec = sc.objects[0]
        g = channel_gains(sc).sensing_gain[0]
        lam = 299_792_458.0 / sc.carrier_hz
        var = lam**2 * spec.rcs_m2 / ((4 * np.pi) ** 3 * spec.distance_m**4)
        sigma0 = 10 ** ((sc.noise_psd_dbm_hz - 30) / 10)
        eps, eps_t = spec.beam_gain
        mono = var * 32.0**4 * eps**2 * eps_t**2 / (32 * sigma0 * sc.b_total_hz)
        p, b = 8.0, 20e6
        assert crb_range(p, b, g, model) == pytest.approx(model.beta1 / (p * mono**2 * b), rel=1e-12)

    def test_model_validation(self):
        with pytest.raises(DomainError):
            CrbModel(beta1=0.0)
        with pytest.raises(DomainError):
            CrbModel(omega_tau=0.0, omega_theta=0.0)


class TestLocalizationObjective:
    def test_reductions(self):
        m = CrbModel(omega_theta=0.0)
        assert localization_objective(2.0, 3.0, 0.5, m) == pytest.approx(m.omega_tau * 2 * 0.25 * 3 / m.beta1)
        assert localization_objective(0.0, 3.0, 0.5, CrbModel()) == 0.0

    def test_compositional(self):
        rng = np.random.default_rng(0)
        m = CrbModel()
        p, b, g = rng.uniform(1, 30, 50), rng.uniform(1e6, 80e6, 50), rng.uniform(1e-4, 1e-2, 50)
        want = m.omega_tau / crb_range(p, b, g, m) + m.omega_theta / crb_angle(p, g, m)
        np.testing.assert_allclose(localization_objective(p, b, g, m), want, rtol=1e-12)

    def test_bilinear(self):
        m = CrbModel()
        rho = lambda p, b: localization_objective(p, b, 3e-3, m)
        assert rho(3.5 * 2.0, 1e7) == pytest.approx(3.5 * rho(2.0, 1e7), rel=1e-12)
        bs = np.linspace(1e6, 9e7, 7)
        vals = rho(2.0, bs)
        slope = np.diff(vals) / np.diff(bs)
        assert np.all(slope > 0)
        np.testing.assert_allclose(slope, slope[0], rtol=1e-9)


class TestSbp:
    def test_single_object(self):
        cfg = SbpConfig((0.0,), 16, 16, 1.0, 100e6, 25e6)
        assert sbp_ratio(cfg) == pytest.approx(4.0)

    def test_noise_limit(self):
        cfg = SbpConfig((-30.0, 0.0, 30.0), 8, 8, 1e15, 90e6, 30e6)
        assert sbp_ratio(cfg, 1) == pytest.approx(3.0, rel=1e-9)

    def test_envelope_increases_and_crosses_one(self):
        r = sbp_sweep([-30.0, 0.0, 30.0], range(2, 129), 10.0, interference="envelope")
        assert np.all(np.diff(r) >= -1e-12)
        assert r[0] < 1 < r[-1]

    def test_exact_pattern_has_nulls(self):
        # Orthogonal steering gives zero leakage at some n, so the exact curve is not monotone.
        r = sbp_sweep([-30.0, 0.0, 30.0], range(2, 65), 10.0, interference="exact")
        assert r.max() == pytest.approx(3.0, rel=1e-9)
        assert np.any(np.diff(r) < 0)

    def test_validation(self):
        with pytest.raises(DomainError):
            SbpConfig((0.0,), 4, 4, 1.0, 100e6, 200e6)
        with pytest.raises(DomainError):
            sbp_ratio(SbpConfig((0.0, 10.0), 4, 4, 1.0, 100e6, 50e6), 5)


class TestInitialBandwidth:
    def test_symmetric_users_get_equal_share(self):
        r = initial_bandwidth(_comm_only())
        assert r.b0[0] == pytest.approx(r.b0[1], rel=1e-6)
        assert r.p0[0] == pytest.approx(r.p0[1], rel=1e-6)

    def test_comm_only_is_rate_maximisation(self):
        sc = _comm_only(60.0, 140.0)
        r = initial_bandwidth(sc)
        g = channel_gains(sc).comm_gain
        pg, bg = np.meshgrid(np.linspace(4, 36, 321), np.linspace(10e6, 90e6, 321))
        se = lambda p, b: b / 100e6 * np.log2(1 + p * g[0] / b) + (100e6 - b) / 100e6 * np.log2(
            1 + (40 - p) * g[1] / (100e6 - b))
        # The two-step seed beats every power split at equal bandwidth and never the joint optimum.
        assert r.rate_bps_hz >= np.max(se(np.linspace(4, 36, 3201), 50e6)) * (1 - 1e-6)
        assert r.rate_bps_hz <= np.max(se(pg, bg)) * (1 + 1e-6)
        # Step 3 is optimal in b for the step-2 power.
        assert r.rate_bps_hz >= np.max(se(r.p0[0], np.linspace(10e6, 90e6, 3201))) * (1 - 1e-6)

    def test_default_seed(self, loc):
        sc, model = loc
        r = initial_bandwidth(sc, model, GAMMA)
        assert r.rate_bps_hz == pytest.approx(7.09, abs=0.02)
        assert r.p0.sum() == pytest.approx(40.0) and r.b0.sum() == pytest.approx(100e6)
        pb = r.p0[:3] * r.b0[:3]
        np.testing.assert_allclose(np.array(GAMMA) * pb, GAMMA[0] * pb[0], rtol=1e-6)


class TestJointAllocation:
    def test_all_feasible_and_audited(self, loc, sweep):
        sc, _ = loc
        for r in sweep:
            assert r.feasible
            assert r.allocation.violation(sc) <= 1e-8

    def test_proportional_products(self, sweep):
        for r in sweep:
            pb = r.allocation.power_w[:3] * r.allocation.bandwidth_hz[:3]
            np.testing.assert_allclose(np.array(GAMMA) * pb / pb[0], 1.0, atol=1e-6)

    def test_crbs_nondecreasing(self, sweep):
        cr = np.array([r.crb_range_m2 for r in sweep])
        ca = np.array([r.crb_angle_rad2 for r in sweep])
        assert np.all(np.diff(cr, axis=0) >= -1e-9 * cr[:-1])
        assert np.all(np.diff(ca, axis=0) >= -1e-9 * ca[:-1])

    def test_power_flat_at_low_threshold(self, sweep):
        low = np.array([r.allocation.power_w for r in sweep if r.gamma_c <= 4.0])
        assert len(low) >= 4
        assert np.abs(low - low[0]).max() <= 1e-4 * low.max()

    def test_objective_trace_monotone(self, sweep):
        for r in sweep:
            assert np.all(np.diff(r.objective_trace) >= -1e-9 * np.abs(r.objective_trace[1:]))

    def test_uniform_seed_fails_before_algorithm1(self, loc):
        sc, model = loc
        a1 = localization_sweep(sc, model, [6.5], GAMMA)[0]
        uni = localization_sweep(sc, model, [6.5], GAMMA, init="uniform")[0]
        assert a1.feasible and not uni.feasible
        assert uni.allocation is None

    def test_above_seed_rate_infeasible(self, loc):
        sc, model = loc
        r = localization_sweep(sc, model, [7.5], GAMMA)[0]
        assert not r.feasible and r.allocation is None
        assert r.seed_rate_bps_hz < 7.5

    def test_rho_form(self, loc):
        sc, model = loc
        g = [1.0, 0.5, 0.3]
        L = est._layout(sc, model, None)
        for r in localization_sweep(sc, model, [1.0, 5.0], g, prop_form="rho"):
            assert r.feasible
            u = r.allocation.power_w / L.P
            v = r.allocation.bandwidth_hz / L.Bt
            rho = est._rho(L, u[None], v[None], [0])[0]
            np.testing.assert_allclose(rho / rho[0], g, rtol=1e-6)

    def test_rho_form_reports_infeasible(self, loc):
        # ISAC has a far weaker echo than Tar1, so matching ratio 2 overruns the budget.
        sc, model = loc
        assert not localization_sweep(sc, model, [1.0], [1.0, 0.5, 2.0], prop_form="rho")[0].feasible

    def test_fairness_equalises(self, loc):
        sc, model = loc
        r = localization_sweep(sc, model, [3.0], None, Criterion.FAIRNESS)[0]
        assert r.feasible
        assert np.ptp(r.rho) <= 1e-5 * r.rho.max()


class TestAoProperties:
    def test_monotone_on_random_instances(self, loc):
        sc, model = loc
        rng = np.random.default_rng(5)
        k = 100
        base = channel_gains(sc)
        sg = base.sensing_gain * rng.uniform(0.3, 3.0, (k, 3))
        cg = base.comm_gain * rng.uniform(0.3, 3.0, (k, 3))
        L1 = est._layout(sc, model, None, sensing_gain=sg, comm_gain=cg)
        u0, v0, rate, status = est._initial(L1, False)
        assert all(s is Status.OPTIMAL for s in status)
        ao = est.solve_localization(L1, 0.6 * rate, Criterion.COMPREHENSIVE, u0, v0)
        tr = np.array(ao.trace)
        assert set(ao.status) <= {"Converged", "MaxIter"}
        assert np.all(np.diff(tr, axis=0) >= -1e-9 * np.abs(tr[1:]))

    def test_p_subproblem_grid_oracle(self):
        objs = [ObjectSpec(Role.SENSING, 70.0, 10.0, rcs_m2=1.0), ObjectSpec(Role.SENSING, 110.0, -30.0, rcs_m2=1.0),
                ObjectSpec(Role.COMM, 90.0, 50.0)]
        sc = ScenarioConfig(objs, p_box=(4.0, 32.0), b_box=(10e6, 80e6), comm_array_gain=False)
        model = CrbModel()
        L = est._layout(sc, model, None)
        v = np.array([[0.3, 0.3, 0.4]])
        gc = np.array([1.0])
        for crit in (Criterion.COMPREHENSIVE, Criterion.FAIRNESS):
            sub = est._block_problem(L, "p", v, np.array([0]), gc, crit, np.full((1, 3), 1 / 3))
            rep = solve_batch(sub.problem, x0=sub.x0)
            u = sub.decode(rep.x_star)
            F = est._objective_fn(L, crit)
            got = F(u, v, [0])[0]
            u1, u2 = np.meshgrid(np.linspace(0.1, 0.8, 1401), np.linspace(0.1, 0.8, 1401))
            u3 = 1 - u1 - u2
            grid = np.stack([u1.ravel(), u2.ravel(), u3.ravel()], axis=1)
            ok = (grid[:, 2] >= 0.1) & (grid[:, 2] <= 0.8)
            rate = v[0, 2] * np.log2(1 + np.maximum(grid[:, 2], 0) * L.c[0, 0] / v[0, 2])
            ok &= rate >= gc[0]
            vals = F(grid[ok], np.broadcast_to(v, (ok.sum(), 3)), np.zeros(ok.sum(), int))
            assert got >= vals.max() * (1 - 1e-6)
            assert got == pytest.approx(vals.max(), rel=1e-3)
