import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from scsqkd.feedback import (
    ControllerConfig,
    ControllerState,
    DriftProcess,
    HardwareModel,
    drift_path,
    folded_phase,
    pid_step,
    run_loop,
    sense_counts,
    step_drift,
    wrap_phase,
)


def test_dac_step_and_quantisation():
    hw = HardwareModel()
    assert hw.dac_step_v == pytest.approx(10.0 / 65536)
    v = hw.quantize(1.23456789)
    assert abs(v - 1.23456789) <= hw.dac_step_v * hw.amp_gain / 2
    assert (v / hw.amp_gain / hw.dac_step_v).is_integer()
    assert hw.quantize(100.0) <= 10.0


@given(st.floats(-1e3, 1e3))
def test_fold_keeps_phase_mod_2pi(v):
    hw = HardwareModel()
    f = hw.fold(v)
    assert -hw.fold_threshold_v <= f <= hw.fold_threshold_v
    assert math.cos(hw.phase(f) - hw.phase(v)) == pytest.approx(1.0, abs=1e-9)


def test_hardware_validation():
    with pytest.raises(ValueError):
        HardwareModel(fold_step_v=5.0)
    with pytest.raises(ValueError):
        HardwareModel(amp_gain=1.0)


def test_pid_step_pushes_toward_target():
    state = ControllerState(ControllerConfig(kp=0.1, ki=0.1, kd=0.0))
    v1 = pid_step(0.3, state)  # R below target: positive error
    assert v1 > 0
    v2 = pid_step(0.3, state)
    assert v2 > v1  # integrator accumulates
    with pytest.raises(ValueError):
        pid_step(1.5, state)


def test_pid_fold_counts_and_shifts_integrator():
    state = ControllerState(ControllerConfig(kp=0.0, ki=30.0, kd=0.0))
    v = pid_step(0.0, state)  # 30 * 0.5 = 15 V, folded once
    assert state.folds == 1
    assert v == pytest.approx(15.0 - 6.1, abs=1e-3)
    assert state.integral_v == pytest.approx(15.0 - 6.1)


def test_controller_validation():
    with pytest.raises(ValueError):
        ControllerConfig(kp=math.nan)
    with pytest.raises(ValueError):
        ControllerConfig(integration_window_us=0)
    with pytest.raises(ValueError):
        ControllerConfig(pid_cycle_ns=2000.0)
    assert ControllerConfig.null_lock().target_r == 1.0


def test_drift_statistics():
    rng = np.random.default_rng(0)
    paths = np.stack([drift_path(400, 0.0168, rng) for _ in range(2000)])
    assert np.std(paths[:, -1]) == pytest.approx(0.0168 * math.sqrt(400), rel=0.05)
    assert step_drift(1.0, 4.0, 0.0, rng) == 1.0
    with pytest.raises(ValueError):
        step_drift(0.0, 0.0, 0.1, rng)


def test_sense_counts_follow_fringe():
    rng = np.random.default_rng(1)
    d0 = sum(sense_counts(0.0, 2.5, 4, rng)[0] for _ in range(1000))
    assert d0 / 1000 == pytest.approx(10.0, rel=0.05)
    assert sense_counts(math.pi, 2.5, 4, rng)[0] == 0


def test_wrap_and_fold():
    np.testing.assert_allclose(wrap_phase([3 * math.pi / 2, -3 * math.pi / 2]), [-math.pi / 2, math.pi / 2])
    np.testing.assert_allclose(folded_phase([-0.3, 2 * math.pi + 0.3]), [0.3, 0.3])


def test_run_loop_is_reproducible():
    a = run_loop(DriftProcess(seed=4), duration_ms=5)
    b = run_loop(DriftProcess(seed=4), duration_ms=5)
    assert a[1] == b[1]
    assert a[0].to_csv(50) == b[0].to_csv(50)


def test_trace_layout():
    tr, summ = run_loop(DriftProcess(seed=2), duration_ms=2)
    assert len(tr) == 2000
    lines = tr.to_csv(10).splitlines()
    assert lines[0].startswith("t_us,")
    assert len(lines) == 201
    assert summ.mean_counts_per_window == pytest.approx(10.0, rel=0.1)
    assert tr.d0.sum() + tr.d1.sum() == round(summ.mean_counts_per_window * 500)


def test_feedback_suppresses_drift():
    drift = DriftProcess(seed=9)
    _, on = run_loop(drift, duration_ms=50)
    _, off = run_loop(drift, duration_ms=50, feedback_on=False)
    assert on.residual_std < 0.25
    assert on.residual_std**2 < off.residual_std**2 / 5


def test_null_lock_also_tracks():
    _, s = run_loop(DriftProcess(seed=1), ControllerConfig.null_lock(), duration_ms=30)
    assert s.mean_abs_residual < 0.6


def test_no_drift_stays_locked():
    _, s = run_loop(DriftProcess(0.0, 0), duration_ms=5)
    assert s.residual_std < 0.1


def test_fold_example_from_hardware_numbers():
    hw = HardwareModel()
    assert hw.fold(10.4) == pytest.approx(4.3)
    assert hw.fold(-10.4) == pytest.approx(-4.3)
    assert np.exp(1j * hw.phase(10.4)) == pytest.approx(np.exp(1j * hw.phase(4.3)))


def test_quadrature_split_is_even():
    rng = np.random.default_rng(8)
    d0, d1 = sense_counts(math.pi / 2, 1e6, 1.0, rng)
    n = d0 + d1
    assert abs(d0 / n - 0.5) <= 5 * math.sqrt(0.25 / n)
    assert sense_counts(0.3, 0.0, 4, rng) == (0, 0)


def test_drift_variance_grows_linearly():
    rng = np.random.default_rng(12)
    ends = np.array([drift_path(1000, 0.0168, rng)[-1] for _ in range(1000)])
    want = 0.0168**2 * 1000
    # sample variance of a normal has relative std sqrt(2 / (n - 1))
    assert abs(ends.var(ddof=1) / want - 1) <= 3 * math.sqrt(2 / 999)


def test_shot_noise_limit_without_drift():
    _, s = run_loop(DriftProcess(0.0, 0), duration_ms=20)
    assert s.residual_std <= 2 / math.sqrt(2.5 * 4)


def test_output_stays_in_amplified_range():
    tr, _ = run_loop(DriftProcess(0.05, 3), duration_ms=20)
    hw = HardwareModel()
    assert np.all(np.abs(tr.voltage) <= hw.amp_gain * hw.dac_range_v)


def test_shorter_window_does_not_hurt():
    # same counts per window, corrections twice as often
    v4, v2 = [], []
    for seed in range(20):
        d = DriftProcess(seed=seed)
        v4.append(run_loop(d, ControllerConfig(integration_window_us=4), duration_ms=50)[1].residual_std ** 2)
        v2.append(
            run_loop(d, ControllerConfig(integration_window_us=2), duration_ms=50, ref_rate_mcps=5.0)[1].residual_std ** 2
        )
    sem = np.std(v4, ddof=1) / math.sqrt(len(v4))
    assert np.mean(v2) <= np.mean(v4) + sem
