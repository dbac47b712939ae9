"""Spring inequality, adversarial relaxation bounds, scaling estimates."""

import json
import math

import numpy as np
import pytest

from holsteinml import bounds, core, dynamics


# ----------------------------------------------------------- spring condition


def test_spring_condition_reference_point():
    c = bounds.check_spring_condition(0.5011, 0.7104, M=1.0, gamma=0.1)
    assert c.floor_ok
    assert c.lhs == pytest.approx(1.418, abs=1e-3)
    assert c.rhs == pytest.approx(1.501, abs=1e-3)
    assert c.holds


def test_spring_condition_fails_when_drift_too_wide():
    c = bounds.check_spring_condition(0.1, 0.9, M=1.0, gamma=0.1)
    assert c.floor_ok and not c.holds
    assert c.lhs > c.rhs


def test_spring_condition_overdamped_floor():
    # K_min below M (gamma/2)^2: failed precondition, not an exception.
    c = bounds.check_spring_condition(0.2, 0.5, M=1.0, gamma=2.0)
    assert not c.floor_ok and not c.holds
    assert math.isnan(c.rhs)
    with pytest.raises(ValueError):
        bounds.worst_case_ratio(0.2, 0.5, 1.0, 2.0)


def test_spring_condition_undamped_never_contracts():
    c = bounds.check_spring_condition(1.0, 1.0, M=1.0, gamma=0.0)
    assert c.rhs == 1.0 and not c.holds


def test_spring_condition_validation():
    with pytest.raises(ValueError):
        bounds.check_spring_condition(1.0, 0.5, 1.0, 0.1)
    with pytest.raises(ValueError):
        bounds.check_spring_condition(0.5, 1.0, -1.0, 0.1)


def test_ratio_squares_to_condition_sides():
    rng = np.random.default_rng(0)
    tested = 0
    while tested < 50:
        K_min = rng.uniform(0.05, 2.0)
        K_max = K_min * rng.uniform(1.0, 4.0)
        M = rng.uniform(0.5, 2.0)
        gamma = rng.uniform(0.01, 1.2)
        if K_min <= M * (gamma / 2.0) ** 2:
            continue
        c = bounds.check_spring_condition(K_min, K_max, M, gamma)
        r = bounds.worst_case_ratio(K_min, K_max, M, gamma)
        assert r**2 == pytest.approx(c.lhs / c.rhs, rel=1e-12)
        assert (r < 1.0) == c.holds
        tested += 1


# --------------------------------------------------------- measured stiffness


@pytest.fixture(scope="module")
def traj():
    p = core.HolsteinParams(L=6, g=1.3, dt=0.05)
    init = core.sample_initial_state(p, 0.3, 0)
    return p, dynamics.evolve(init, p, 40, dynamics.ExactField(p.filling), record_stride=4)


def test_measure_stiffness_values(traj):
    from holsteinml import qss

    p, t = traj
    s = bounds.measure_stiffness(t, site=0, params=p)
    assert len(s.times) == len(t.times)
    probe = qss.response(t.Q[3], p.g, 0, filling=p.filling)
    assert s.K_values[3] == pytest.approx(p.k - p.g * probe.value, rel=1e-12)
    assert s.K_min == s.K_values.min() and s.K_max == s.K_values.max()


def test_measure_stiffness_window(traj):
    p, t = traj
    s = bounds.measure_stiffness(t, site=0, params=p, t_start=0.5, t_stop=1.5)
    assert np.all((s.times >= 0.5) & (s.times <= 1.5))
    assert 0 < len(s.times) < len(t.times)
    with pytest.raises(ValueError):
        bounds.measure_stiffness(t, site=0, params=p, t_start=999.0)


def test_offdiag_response_diagnostic(traj):
    p, t = traj
    v = bounds.offdiag_response_max(t.Q[0], p.g, site=0, filling=p.filling)
    assert math.isfinite(v) and v >= 0.0


def test_stiffness_csv(traj, tmp_path):
    p, t = traj
    s = bounds.measure_stiffness(t, site=0, params=p)
    f = tmp_path / "k.csv"
    bounds.write_stiffness_csv(s, f)
    lines = f.read_text().strip().split("\n")
    assert lines[0] == "t,K,degenerate"
    assert len(lines) == 1 + len(s.times)


# --------------------------------------------------------- worst-case spec


def test_spring_spec_blocks():
    s = bounds.spring_spec(K_min=0.5, K_max=0.8, M=2.0, gamma=0.3, fbar=1.5, dimension=2)
    np.testing.assert_array_equal(s.pq_lower, np.eye(2) / 2.0)
    np.testing.assert_array_equal(s.qp_lower, -0.8 * np.eye(2))
    np.testing.assert_array_equal(s.qp_upper, -0.5 * np.eye(2))
    np.testing.assert_array_equal(s.fp_bar, [1.5, 1.5])
    np.testing.assert_array_equal(s.fq_bar, [0.0, 0.0])
    assert s.gamma == 0.3


def test_spec_validation():
    with pytest.raises(ValueError):
        bounds.WorstCaseSpec(
            dimension=1, qq_lower=1.0, qq_upper=0.0, pq_lower=0.0, pq_upper=0.0,
            qp_lower=0.0, qp_upper=0.0, pp_lower=0.0, pp_upper=0.0,
            fq_bar=0.0, fp_bar=1.0, gamma=0.1, M=1.0, horizon=10.0, dt=0.01,
        )
    with pytest.raises(ValueError):
        bounds.WorstCaseSpec(
            dimension=1, qq_lower=0.0, qq_upper=0.0, pq_lower=0.0, pq_upper=0.0,
            qp_lower=0.0, qp_upper=0.0, pp_lower=0.0, pp_upper=0.0,
            fq_bar=-1.0, fp_bar=1.0, gamma=0.1, M=1.0, horizon=10.0, dt=0.01,
        )
    with pytest.raises(ValueError):
        bounds.spring_spec(K_min=0.5, K_max=0.8, horizon=-1.0)


def test_spec_roundtrip():
    s = bounds.spring_spec(K_min=0.45, K_max=0.78, gamma=0.1, fbar=2.0, dimension=3)
    back = bounds.spec_from_dict(bounds.spec_to_dict(s))
    assert bounds.spec_to_dict(back) == bounds.spec_to_dict(s)


# ------------------------------------------------------ relaxation simulation


EPS3 = (1e-4, 4e-4, 1.6e-3)


def test_well_damped_spring_scales_as_sqrt_eps():
    spec = bounds.spring_spec(K_min=1.0, K_max=1.0, M=1.0, gamma=1.5, horizon=60.0)
    rep = bounds.relaxation_simulate(spec, EPS3)
    assert rep.verdict == "yes"
    assert rep.slope == pytest.approx(0.5, abs=1e-9)
    assert np.all(rep.saturated)
    # scaling eps by 4 rescales the whole trajectory by exactly 2 in IEEE
    # arithmetic, so the per-eps constants are bitwise identical
    assert rep.C_q[0] == rep.C_q[1] == rep.C_q[2]
    # adversarial amplitude can never beat the static bound 2 fbar / K
    assert rep.C_q[0] <= 2.0 * 1.0 / 1.0


def test_undamped_spring_pumps_forever():
    spec = bounds.spring_spec(K_min=1.0, K_max=1.0, M=1.0, gamma=0.0, horizon=100.0)
    rep = bounds.relaxation_simulate(spec, EPS3)
    assert rep.verdict == "no"
    assert not np.all(rep.saturated)


def test_unstable_spec_blows_up():
    spec = bounds.WorstCaseSpec(
        dimension=1, qq_lower=0.5, qq_upper=0.5, pq_lower=0.0, pq_upper=0.0,
        qp_lower=0.0, qp_upper=0.0, pp_lower=0.0, pp_upper=0.0,
        fq_bar=1.0, fp_bar=0.0, gamma=0.0, M=1.0, horizon=80.0, dt=0.01,
    )
    rep = bounds.relaxation_simulate(spec, EPS3)
    assert rep.verdict == "no"
    assert math.isnan(rep.slope)
    assert len(rep.blowup_time) > 0


def test_zero_forcing_is_trivially_bounded():
    spec = bounds.spring_spec(K_min=1.0, K_max=1.2, gamma=0.5, fbar=0.0, horizon=20.0)
    rep = bounds.relaxation_simulate(spec, EPS3)
    assert rep.verdict == "yes"
    assert np.all(rep.max_q == 0.0)
    assert math.isnan(rep.slope)


def test_relaxation_epsilon_validation():
    spec = bounds.spring_spec(K_min=1.0, K_max=1.0, horizon=10.0)
    with pytest.raises(ValueError):
        bounds.relaxation_simulate(spec, [1e-4])
    with pytest.raises(ValueError):
        bounds.relaxation_simulate(spec, [1e-4, 2e-4])
    with pytest.raises(ValueError):
        bounds.relaxation_simulate(spec, [-1e-4, 1e-3])


def test_bound_report_json(tmp_path):
    spec = bounds.spring_spec(K_min=1.0, K_max=1.0, gamma=1.5, horizon=40.0)
    rep = bounds.relaxation_simulate(spec, EPS3)
    f = tmp_path / "rep.json"
    bounds.write_bound_report(rep, f)
    d = json.loads(f.read_text())
    assert d["verdict"] == rep.verdict
    assert d["max_q"] == rep.max_q.tolist()


# ------------------------------------------------------------- scaling hints


def test_error_bound_estimate_formulas():
    assert bounds.error_bound_estimate(100, 1e-4, 0.1, "generic") == pytest.approx(
        math.sqrt(100 * 1e-4 / 0.1), rel=1e-12
    )
    assert bounds.error_bound_estimate(50, 1e-4, 0.1, "subgaussian") == pytest.approx(
        math.sqrt(2e-4 * math.log(1000.0)), rel=1e-12
    )
    assert bounds.error_bound_estimate(10, 1e-4, 0.1, "bounded") == \
        bounds.error_bound_estimate(10_000, 1e-4, 0.1, "bounded")


def test_error_bound_estimate_validation():
    with pytest.raises(ValueError):
        bounds.error_bound_estimate(0, 1e-4, 0.1, "generic")
    with pytest.raises(ValueError):
        bounds.error_bound_estimate(10, 0.9, 0.1, "generic")
    with pytest.raises(ValueError):
        bounds.error_bound_estimate(10, 1e-4, 0.1, "other")


def test_sample_size_hint_formula():
    v = bounds.sample_size_hint(1000, 0.05, 0.01)
    ref = math.log(1000 / 0.05) * 2.0 ** (math.log(100.0) ** 2)
    assert v == pytest.approx(ref, rel=1e-12)
    assert bounds.sample_size_hint(1000, 0.05, 0.01, degree=1) < v
    with pytest.raises(ValueError):
        bounds.sample_size_hint(0, 0.05, 0.01)
