import math

import mpmath as mp
import numpy as np
import pytest

from scsqkd.channel import (
    FOLDED_STD_FACTOR,
    ChannelSpec,
    DetectorSpec,
    FrameLayout,
    arm_transmittance,
    cell_click_probabilities,
    channel_from_dict,
    click_probabilities,
    expected_count_table,
    paper_channel,
    paper_detectors,
    port_intensities,
    sent_counts,
    simulate_count_table_mc,
)
from scsqkd.model import CELLS, ProtocolParams, qber_both_send, read_dataset

PARAMS = ProtocolParams.from_intensities(10_000_000, 0.2, 0.0174, 0.0348)


def test_folded_std_of_signed_normal():
    rng = np.random.default_rng(3)
    x = rng.normal(0.0, 1.0, 2_000_000)
    assert np.std(np.abs(x)) == pytest.approx(FOLDED_STD_FACTOR, rel=2e-3)


def test_port_intensities_conserve_photons():
    lo, hi = port_intensities(0.3, 0.1, np.linspace(0, np.pi, 7))
    np.testing.assert_allclose(lo + hi, 0.4)
    assert lo[0] == pytest.approx(0.2 - math.sqrt(0.03))
    assert lo[-1] == pytest.approx(0.2 + math.sqrt(0.03))


def test_arm_transmittance_by_hand():
    ch = ChannelSpec(len_ac=10.0, atten_db_per_km=0.2, extra_loss_a_db=1.0, monitor_tap_fraction=0.1)
    det = DetectorSpec(efficiency=0.5, window_retention=0.8)
    want = 10 ** (-0.3) * 0.9 * 1.0 * 0.5 * 0.8
    assert arm_transmittance(ch, det, "A") == pytest.approx(want)
    with pytest.raises(ValueError):
        arm_transmittance(ch, det, "C")


def test_vacuum_cell_is_dark_counts_only():
    p0, p1 = click_probabilities(PARAMS, 0.5, 0.5, (0, 0), 0.0, (1e-8, 2e-8))
    assert (p0, p1) == pytest.approx((1e-8, 2e-8))


def test_single_sender_splits_evenly():
    p0, p1 = click_probabilities(PARAMS, 0.5, 0.5, (1, 0), 1.234)
    assert p0 == pytest.approx(p1)
    assert p0 == pytest.approx(1 - math.exp(-0.25 * PARAMS.mu_a))


def test_perfect_interference_empties_destructive_port():
    params = ProtocolParams.from_intensities(10, 0.2, 0.02, 0.02)
    p0, p1 = click_probabilities(params, 0.5, 0.5, (1, 1), 0.0)
    assert p0 == 0.0 and p1 > 0.0
    p0, p1 = click_probabilities(params, 0.5, 0.5, (1, 1), 0.0, destructive_channel=1)
    assert p1 == 0.0 and p0 > 0.0


def test_phase_average_matches_mpmath_quad():
    ch = paper_channel(10.0, 15.0)
    probs = cell_click_probabilities(PARAMS, ch, paper_detectors(), order=32)
    eta_a = arm_transmittance(ch, None, "A")
    eta_b = arm_transmittance(ch, None, "B")
    d = paper_detectors()
    xa, xb, s = eta_a * PARAMS.mu_a, eta_b * PARAMS.mu_b, ch.phase_sigma

    def p_port(sign, det):
        def f(phi):
            i = (xa + xb) / 2 + sign * mp.sqrt(xa * xb) * mp.cos(phi)
            dens = mp.exp(-phi**2 / (2 * s**2)) / (s * mp.sqrt(2 * mp.pi))
            return (1 - (1 - det.dark_per_window) * mp.exp(-det.efficiency * i)) * dens

        return float(mp.quad(f, [-mp.inf, 0, mp.inf]))

    assert probs[1, 1][0] == pytest.approx(p_port(-1, d[0]), rel=1e-10)
    assert probs[1, 1][1] == pytest.approx(p_port(+1, d[1]), rel=1e-10)


def test_quadrature_self_convergence():
    ch = paper_channel(25.0, 25.5)
    lo = cell_click_probabilities(PARAMS, ch, paper_detectors(), order=8)
    hi = cell_click_probabilities(PARAMS, ch, paper_detectors(), order=64)
    for cell in CELLS:
        for c in (0, 1):
            assert lo[cell][c] == pytest.approx(hi[cell][c], rel=1e-6)


def test_sent_counts_sum_exactly():
    for n in (1, 7, 10_000_001, 363_000_000_000):
        s = sent_counts(n, 0.2)
        assert sum(map(sum, s)) == n
        assert s[0][1] == s[1][0]


def test_expected_table_keeps_unrounded_values():
    t = expected_count_table(PARAMS, paper_channel(0, 0), paper_detectors())
    assert t.expected is not None
    for a, b in CELLS:
        for c in (0, 1):
            assert t.detected[a][b][c] == round(t.expected[a][b][c])
    with pytest.raises(ValueError):
        expected_count_table(PARAMS, paper_channel(0, 0), paper_detectors(), integrate_phase=4)


def test_monte_carlo_is_seeded_and_chunk_independent_in_total():
    ch, det = paper_channel(5, 5), paper_detectors()
    a = simulate_count_table_mc(PARAMS, ch, det, 300_000, seed=11, chunk=100_000)
    b = simulate_count_table_mc(PARAMS, ch, det, 300_000, seed=11, chunk=100_000)
    c = simulate_count_table_mc(PARAMS, ch, det, 300_000, seed=12, chunk=100_000)
    assert a == b
    assert a != c
    assert a.n_windows == 300_000


def test_monte_carlo_agrees_with_analytic():
    ch, det = paper_channel(0, 0), paper_detectors()
    mc = simulate_count_table_mc(PARAMS, ch, det, 2_000_000, seed=5)
    probs = cell_click_probabilities(PARAMS, ch, det)
    for a, b in CELLS:
        n = mc.sent[a][b]
        for c in (0, 1):
            p = probs[a, b][c]
            assert abs(mc.detected[a][b][c] - n * p) <= 5 * math.sqrt(n * p * (1 - p)) + 1


def test_channel_from_dataset_section():
    ch, det = channel_from_dict(read_dataset("paper_101p1km").channel)
    assert det[0].window_retention == pytest.approx(0.79)
    assert det[0].gate_ps == 600.0
    ch, det = channel_from_dict(read_dataset("paper_25p3km").channel)
    assert ch.extra_loss_b_db == pytest.approx(1.2)
    assert det[0].gate_ps == 700.0
    with pytest.raises(ValueError):
        channel_from_dict({"len_ac": 1.0, "bogus": 2})


def test_simulated_qber_near_measured_at_zero_km():
    ds = read_dataset("paper_0km")
    ch, det = channel_from_dict(ds.channel)
    t = expected_count_table(ds.params, ch, det)
    assert qber_both_send(t) == pytest.approx(0.0195, abs=0.002)


def test_frame_layout_rate():
    assert FrameLayout().effective_rate_mhz == pytest.approx(100.0)


@pytest.mark.parametrize(
    "kw",
    [{"len_ac": -1.0}, {"monitor_tap_fraction": 1.0}, {"phase_sigma": -0.1}, {"pbs_eff_a": 1.2}, {"bs_port_eff_b": 0.6}],
)
def test_channel_validation(kw):
    with pytest.raises(ValueError):
        ChannelSpec(**kw)


def test_more_loss_never_adds_counts():
    base = cell_click_probabilities(PARAMS, paper_channel(10, 10), paper_detectors())
    lossy = cell_click_probabilities(PARAMS, paper_channel(10, 10, extra_loss_b_db=3.0), paper_detectors())
    longer = cell_click_probabilities(PARAMS, paper_channel(20, 10), paper_detectors())
    for cell in CELLS:
        for c in (0, 1):
            if cell == (1, 1) and c == 0:
                continue  # see test_unbalanced_loss_brightens_dark_port
            assert lossy[cell][c] <= base[cell][c] + 1e-18
            assert longer[cell][c] <= base[cell][c] + 1e-18
    assert lossy[0, 0] == base[0, 0]


def test_unbalanced_loss_brightens_dark_port():
    # Bob's arm already arrives dimmer; more loss there spoils the interference
    ch = paper_channel(10, 10)
    xa = arm_transmittance(ch, None, "A") * PARAMS.mu_a
    xb = arm_transmittance(ch, None, "B") * PARAMS.mu_b
    assert xb < xa
    base = cell_click_probabilities(PARAMS, ch, paper_detectors())
    lossy = cell_click_probabilities(PARAMS, paper_channel(10, 10, extra_loss_b_db=3.0), paper_detectors())
    assert lossy[1, 1][0] > base[1, 1][0]
    assert lossy[1, 1][1] < base[1, 1][1]


def test_swapping_parties_swaps_single_send_cells():
    ch = paper_channel(12, 30)
    mirror = ChannelSpec(
        **{
            **ch.__dict__,
            "len_ac": ch.len_bc,
            "len_bc": ch.len_ac,
            "pbs_eff_a": ch.pbs_eff_b,
            "pbs_eff_b": ch.pbs_eff_a,
            "pm_eff_a": ch.pm_eff_b,
            "pm_eff_b": ch.pm_eff_a,
            "bs_port_eff_a": ch.bs_port_eff_b,
            "bs_port_eff_b": ch.bs_port_eff_a,
        }
    )
    p = ProtocolParams.from_intensities(100, 0.2, 0.01, 0.03)
    q = ProtocolParams.from_intensities(100, 0.2, 0.03, 0.01)
    a = cell_click_probabilities(p, ch, paper_detectors())
    b = cell_click_probabilities(q, mirror, paper_detectors())
    assert a[0, 1] == pytest.approx(b[1, 0], rel=1e-12)
    assert a[1, 0] == pytest.approx(b[0, 1], rel=1e-12)
    assert a[0, 0] == pytest.approx(b[0, 0], rel=1e-12)
    assert a[1, 1] == pytest.approx(b[1, 1], rel=1e-12)
