import numpy as np
import pytest

from fatiguemotion.compartments import (
    Cc3Params,
    CompartmentState,
    ELBOW,
    FatigueProfile,
    LoadProfile,
    advance,
    controller,
    derivatives,
    load_profiles,
    modulate_torque,
    residual_capacity,
    residual_capacity_lambda,
    save_profiles,
    simulate,
    step_rk4,
    trajectory_to_csv,
)
from fatiguemotion.errors import ParameterError

FAST = Cc3Params(F=0.01, R=0.001)


def state(m_a, m_f, m_r):
    return CompartmentState(m_a, m_f, m_r)


class TestController:
    def test_case_developing(self):
        assert controller(state(10, 0, 90), 50, Cc3Params(0, 0)) == 10 * 40

    def test_case_rest_starved(self):
        assert controller(state(10, 60, 30), 50, Cc3Params(0, 0)) == 10 * 30

    def test_case_relaxing(self):
        assert controller(state(60, 0, 40), 50, Cc3Params(0, 0)) == 10 * (50 - 60)

    def test_domain(self):
        with pytest.raises(ParameterError):
            controller(state(10, 0, 90), 120, FAST)

    def test_continuity_at_case_boundaries(self):
        p = Cc3Params(F=0.02, R=0.002, LD=10, LR=10)
        rng = np.random.default_rng(0)
        for _ in range(1000):
            # boundary M_A = TL: developing and relaxing branches both vanish
            tl = rng.uniform(0, 100)
            assert abs(p.LD * (tl - tl)) <= 1e-12
            assert abs(p.LR * (tl - tl)) <= 1e-12
            # boundary M_R = TL - M_A: both developing branches agree
            m_a = rng.uniform(0, tl)
            m_r = tl - m_a
            assert abs(p.LD * (tl - m_a) - p.LD * m_r) <= 1e-12


class TestDerivatives:
    def test_sum_zero(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            m = rng.uniform(0, 100, size=3)
            m = 100 * m / m.sum()
            d = derivatives(state(*m), rng.uniform(0, 100), FAST)
            assert d.sum() == pytest.approx(0.0, abs=1e-12)

    def test_full_activation(self):
        # M_A = TL = 100: controller flow is zero, fatigue outflow is F*M_A
        d = derivatives(state(100, 0, 0), 100, FAST)
        assert d[1] == pytest.approx(FAST.F * 100, abs=1e-15)
        assert d[0] == pytest.approx(-FAST.F * 100, abs=1e-15)

    def test_fatigue_recovery_balance(self):
        # F*M_A = R*M_F and C = 0 gives a stationary fatigued pool
        p = Cc3Params(F=0.001, R=0.01)
        m_a, m_f = 40.0, 4.0
        tl = m_a  # relaxing branch with TL = M_A gives C = 0
        d = derivatives(state(m_a, m_f, 100 - m_a - m_f), tl, p)
        assert d[1] == pytest.approx(0.0, abs=1e-15)


class TestStepRk4:
    def test_rest_fixed_point(self):
        s = step_rk4(CompartmentState.rested(), 0.0, ELBOW, 0.05)
        assert (s.M_A, s.M_F, s.M_R) == (0.0, 0.0, 100.0)

    def test_dt_domain(self):
        with pytest.raises(ParameterError):
            step_rk4(CompartmentState.rested(), 50.0, ELBOW, 0.0)
        with pytest.raises(ParameterError):
            step_rk4(CompartmentState.rested(), 50.0, ELBOW, 0.6)

    def test_order_four_convergence(self):
        # TL=100 keeps the controller on one branch, so the dynamics are
        # smooth; Richardson ratios over [0, 0.4] s should sit near 2^4.
        def integrate(dt, t_end=0.4):
            s = CompartmentState.rested()
            for _ in range(int(round(t_end / dt))):
                s = step_rk4(s, 100.0, ELBOW, dt)
            return s.as_array()

        ref = integrate(0.4 / 2048)
        errs = [np.abs(integrate(dt) - ref).max() for dt in (0.04, 0.02, 0.01)]
        r1 = errs[0] / errs[1]
        r2 = errs[1] / errs[2]
        assert 12 < r1 < 20, (errs, r1)
        assert 12 < r2 < 20, (errs, r2)

    def test_against_fine_euler_reference(self):
        # Independent oracle: explicit Euler at dt=1e-3 out to t=60 s. The
        # reference's own truncation error is ~1.5e-4 %MVC on the large
        # pools, so agreement is checked per component relative to scale.
        p = ELBOW
        s = np.array([0.0, 0.0, 100.0])
        dt = 1e-3
        for _ in range(60_000):
            m_a, m_f, m_r = s
            c = p.LD * m_r if (m_a < 100 and m_r <= 100 - m_a) else p.LD * (100 - m_a)
            s = s + dt * np.array([c - p.F * m_a, p.F * m_a - p.R * m_f, -c + p.R * m_f])
        state_arr = np.array([0.0, 0.0, 100.0])
        for _ in range(1200):
            state_arr = advance(state_arr, 100.0, p, 0.05)
        rel = np.abs(state_arr - s) / np.maximum(np.abs(s), 1e-9)
        assert rel.max() < 1e-4, (state_arr, s, rel)


class TestSimulate:
    def test_no_demand_constant(self):
        load = LoadProfile.constant(0.0, 10.0, 0.05)
        traj = simulate(None, load, ELBOW)
        np.testing.assert_array_equal(traj.states, np.tile([0.0, 0.0, 100.0], (201, 1)))

    def test_fatigue_monotone_under_load(self):
        load = LoadProfile.constant(50.0, 100.0, 0.05)
        traj = simulate(None, load, ELBOW)
        assert np.diff(traj.M_F).min() >= 0

    def test_steady_state_balance(self):
        p = ELBOW
        load = LoadProfile.constant(50.0, 10.0 / p.R, 0.5)
        traj = simulate(None, load, p)
        f_in = p.F * traj.M_A[-1]
        r_out = p.R * traj.M_F[-1]
        assert abs(f_in - r_out) < 0.01 * f_in

    def test_conservation_and_positivity(self):
        load = LoadProfile.constant(80.0, 500.0, 0.05)
        traj = simulate(None, load, Cc3Params(F=0.1, R=0.01))
        assert traj.conservation_error() < 1e-6
        assert traj.states.min() >= 0

    def test_faster_fatigue_for_larger_f(self):
        load = LoadProfile.constant(50.0, 100.0, 0.01)
        slow = simulate(None, load, Cc3Params(F=ELBOW.F, R=ELBOW.R))
        fast = simulate(None, load, Cc3Params(F=2 * ELBOW.F, R=ELBOW.R))
        assert np.all(fast.M_F[1:] > slow.M_F[1:])

    def test_rc_monotone_while_fatiguing(self):
        load = LoadProfile.constant(60.0, 50.0, 0.05)
        traj = simulate(None, load, FAST)
        assert np.diff(traj.rc).max() <= 0

    def test_empty_profile_rejected(self):
        with pytest.raises(ParameterError):
            LoadProfile(np.array([]), 0.05)

    def test_determinism(self):
        load = LoadProfile.constant(70.0, 20.0, 0.05)
        a = simulate(None, load, FAST)
        b = simulate(None, load, FAST)
        np.testing.assert_array_equal(a.states, b.states)


class TestResidualCapacity:
    def test_paper_worked_example(self):
        assert residual_capacity_lambda(20.0, 0.6) == pytest.approx(88.0, abs=1e-12)

    def test_lambda_one_is_rc(self):
        s = state(30, 25, 45)
        assert residual_capacity_lambda(s.M_F, 1.0) == residual_capacity(s)

    def test_lambda_zero_disables(self):
        assert residual_capacity_lambda(95.0, 0.0) == 100.0

    def test_lambda_domain(self):
        with pytest.raises(ParameterError):
            residual_capacity_lambda(20.0, 1.5)
        with pytest.raises(ParameterError):
            residual_capacity_lambda(20.0, -0.1)


class TestModulateTorque:
    def test_example(self):
        assert modulate_torque(0.5, 88.0) == pytest.approx(0.44, abs=1e-12)

    def test_identity_at_full_capacity(self):
        assert modulate_torque(-3.7, 100.0) == -3.7

    def test_sign_preserved(self):
        assert modulate_torque(-2.0, 70.0) == pytest.approx(-1.4, abs=1e-12)

    def test_domain(self):
        with pytest.raises(ParameterError):
            modulate_torque(1.0, 140.0)


class TestStateInvariants:
    def test_conservation_required(self):
        with pytest.raises(ParameterError):
            CompartmentState(50, 10, 10)

    def test_non_negative(self):
        with pytest.raises(ParameterError):
            CompartmentState(-5, 5, 100)


class TestProfilesAndExport:
    def test_profile_json_round_trip(self, tmp_path):
        profiles = [
            FatigueProfile("elbow", F=0.00912, R=0.00094, lam=0.6),
            FatigueProfile("shoulder", F=0.0146, R=0.0022, lam=1.0),
        ]
        save_profiles(profiles, tmp_path / "p.json")
        text = (tmp_path / "p.json").read_text()
        assert '"lambda"' in text and '"lam"' not in text
        loaded = load_profiles(tmp_path / "p.json")
        assert loaded["elbow"] == profiles[0]
        assert loaded["shoulder"].cc3 == Cc3Params(0.0146, 0.0022)

    def test_lambda_validated(self):
        with pytest.raises(ParameterError):
            FatigueProfile("elbow", F=0.01, R=0.001, lam=1.2)

    def test_trajectory_csv(self, tmp_path):
        load = LoadProfile.constant(50.0, 1.0, 0.05)
        traj = simulate(None, load, FAST)
        trajectory_to_csv(traj, tmp_path / "traj.csv", lam=0.5)
        lines = (tmp_path / "traj.csv").read_text().splitlines()
        assert lines[0] == "t,M_A,M_F,M_R,RC,RC_lambda"
        assert len(lines) == 1 + load.values.size
        row = [float(v) for v in lines[-1].split(",")]
        assert row[1] + row[2] + row[3] == pytest.approx(100.0, abs=1e-9)
        assert row[5] == pytest.approx(100.0 - 0.5 * row[2], abs=1e-12)
