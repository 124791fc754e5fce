"""Three-party channel and detection model producing count tables.

Alice and Bob each send a weak coherent pulse (or nothing) to Charlie,
whose 50:50 beam splitter interferes the two arms onto two threshold
detectors.  With arriving mean photon numbers ``x_a``, ``x_b`` and a
residual phase mismatch ``dphi`` the two output ports receive

    I_-/+ = (x_a + x_b) / 2 -/+ sqrt(x_a x_b) cos(dphi)

and a port clicks with probability ``1 - (1 - p_dark) exp(-eff * I)``.
The destructive port ``I_-`` is the effective channel (ch0) by default.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .model import CELLS, CountTable, ProtocolParams

# std of |dphi| for a zero-mean normal dphi is sigma * sqrt(1 - 2/pi)
FOLDED_STD_FACTOR = math.sqrt(1.0 - 2.0 / math.pi)

# closed-loop spread of the interference-inferred phase, in [0, pi]
MEASURED_FOLDED_PHASE_STD = 0.17


@dataclass(frozen=True)
class ChannelSpec:
    """Fibre, Charlie-side optics and residual phase noise.

    ``bs_port_eff_*`` is the efficiency from an input to *one* output of
    Charlie's beam splitter, so an ideal splitter has 0.5.
    ``phase_sigma`` is the standard deviation of the signed phase mismatch.
    """

    len_ac: float = 0.0
    len_bc: float = 0.0
    atten_db_per_km: float = 0.168
    extra_loss_a_db: float = 0.0
    extra_loss_b_db: float = 0.0
    monitor_tap_fraction: float = 0.10
    pbs_eff_a: float = 1.0
    pbs_eff_b: float = 1.0
    pm_eff_a: float = 1.0
    pm_eff_b: float = 1.0
    bs_port_eff_a: float = 0.5
    bs_port_eff_b: float = 0.5
    phase_sigma: float = MEASURED_FOLDED_PHASE_STD / FOLDED_STD_FACTOR

    def __post_init__(self):
        if self.len_ac < 0 or self.len_bc < 0:
            raise ValueError("fibre lengths must be >= 0")
        if not 0.0 <= self.monitor_tap_fraction < 1.0:
            raise ValueError("monitor_tap_fraction must lie in [0, 1)")
        if self.phase_sigma < 0:
            raise ValueError("phase_sigma must be >= 0")
        for name in ("pbs_eff_a", "pbs_eff_b", "pm_eff_a", "pm_eff_b"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        for name in ("bs_port_eff_a", "bs_port_eff_b"):
            if not 0.0 <= getattr(self, name) <= 0.5:
                raise ValueError(f"{name} must lie in [0, 0.5]")

    @property
    def total_length_km(self) -> float:
        return self.len_ac + self.len_bc


@dataclass(frozen=True)
class DetectorSpec:
    efficiency: float = 1.0
    dark_rate_hz: float = 0.0
    window_retention: float = 1.0
    gate_ps: float = 700.0

    def __post_init__(self):
        if not 0.0 <= self.efficiency <= 1.0:
            raise ValueError("efficiency must lie in [0, 1]")
        if self.dark_rate_hz < 0:
            raise ValueError("dark_rate_hz must be >= 0")
        if not 0.0 <= self.window_retention <= 1.0:
            raise ValueError("window_retention must lie in [0, 1]")

    @property
    def dark_per_window(self) -> float:
        return self.dark_rate_hz * self.gate_ps * 1e-12


@dataclass(frozen=True)
class FrameLayout:
    cycle_ns: float = 100.0
    ref_pulses: int = 15
    ref_span_ns: float = 60.0
    signal_pulses: int = 10
    pulse_width_ps: float = 700.0
    system_rate_mhz: float = 250.0

    @property
    def effective_rate_mhz(self) -> float:
        return self.signal_pulses / self.cycle_ns * 1e3

    @property
    def signal_span_ns(self) -> float:
        return self.cycle_ns - self.ref_span_ns


PAPER_DETECTORS = (
    DetectorSpec(efficiency=0.682, dark_rate_hz=8.4),
    DetectorSpec(efficiency=0.705, dark_rate_hz=7.5),
)


def paper_channel(len_ac: float, len_bc: float, extra_loss_b_db: float = 0.0, **kw) -> ChannelSpec:
    """Channel with the measured efficiencies of Charlie's components."""
    return ChannelSpec(
        len_ac=len_ac,
        len_bc=len_bc,
        extra_loss_b_db=extra_loss_b_db,
        pbs_eff_a=0.927,
        pbs_eff_b=0.921,
        pm_eff_b=0.496,
        bs_port_eff_a=0.457,
        bs_port_eff_b=0.459,
        **kw,
    )


def paper_detectors(window_retention: float = 1.0, gate_ps: float | None = None) -> tuple[DetectorSpec, DetectorSpec]:
    out = []
    for det in PAPER_DETECTORS:
        kw = {"window_retention": window_retention}
        if gate_ps is not None:
            kw["gate_ps"] = gate_ps
        out.append(replace(det, **kw))
    return tuple(out)


def channel_from_dict(doc: dict) -> tuple[ChannelSpec, tuple[DetectorSpec, DetectorSpec]]:
    """Channel and detectors from a dataset's ``channel`` section.

    Charlie's measured component efficiencies are used unless the section
    overrides them; ``window_retention`` below one also narrows the gate
    to 600 ps, the setting that produces that retention.
    """
    doc = dict(doc)
    retention = float(doc.pop("window_retention", 1.0))
    gate = doc.pop("gate_ps", 600.0 if retention < 1.0 else None)
    base = paper_channel(float(doc.pop("len_ac", 0.0)), float(doc.pop("len_bc", 0.0)))
    if doc:
        unknown = set(doc) - set(ChannelSpec.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown channel fields: {', '.join(sorted(unknown))}")
        base = replace(base, **{k: float(v) for k, v in doc.items()})
    return base, paper_detectors(retention, gate)


def arm_transmittance(spec: ChannelSpec, detector: DetectorSpec | None, arm: str) -> float:
    """Probability that a photon from one arm reaches and fires a detector.

    The beam-splitter factor counts both output ports, so the returned
    value is the total over the two ports; each port receives half of it
    in the absence of interference.
    """
    if arm not in ("A", "B"):
        raise ValueError("arm must be 'A' or 'B'")
    a = arm == "A"
    length = spec.len_ac if a else spec.len_bc
    extra = spec.extra_loss_a_db if a else spec.extra_loss_b_db
    eta = 10.0 ** (-(length * spec.atten_db_per_km + extra) / 10.0)
    eta *= 1.0 - spec.monitor_tap_fraction
    if a:
        eta *= spec.pbs_eff_a * spec.pm_eff_a * 2.0 * spec.bs_port_eff_a
    else:
        eta *= spec.pbs_eff_b * spec.pm_eff_b * 2.0 * spec.bs_port_eff_b
    if detector is not None:
        eta *= detector.efficiency * detector.window_retention
    return eta


def port_intensities(x_a, x_b, delta_phi):
    """Mean photon numbers at the destructive and constructive ports."""
    mean = 0.5 * (x_a + x_b)
    cross = np.sqrt(x_a * x_b) * np.cos(delta_phi)
    return mean - cross, mean + cross


def click_probabilities(
    params: ProtocolParams,
    eta_a: float,
    eta_b: float,
    choice: tuple[int, int],
    delta_phi=0.0,
    dark_per_window=0.0,
    port_efficiency=(1.0, 1.0),
    destructive_channel: int = 0,
):
    """Click probabilities ``(p_ch0, p_ch1)`` for one window.

    ``eta_*`` are arm transmittances up to (not including) the detectors;
    ``port_efficiency`` and ``dark_per_window`` may differ per channel.
    ``delta_phi`` may be an array, in which case arrays are returned.
    """
    a, b = choice
    x_a = eta_a * params.mu_a * a
    x_b = eta_b * params.mu_b * b
    if x_a < 0 or x_b < 0:
        raise ValueError("intensities must be >= 0")
    i_minus, i_plus = port_intensities(x_a, x_b, delta_phi)
    # cos(dphi) = 1 can leave -1e-19 on the destructive port
    i_minus = np.maximum(i_minus, 0.0)
    if np.ndim(dark_per_window) == 0:
        dark = (float(dark_per_window), float(dark_per_window))
    else:
        dark = tuple(float(x) for x in dark_per_window)
    ports = {destructive_channel: i_minus, 1 - destructive_channel: i_plus}
    out = []
    for ch in (0, 1):
        intensity = ports[ch] * port_efficiency[ch]
        out.append(1.0 - (1.0 - dark[ch]) * np.exp(-intensity))
    return out[0], out[1]


def sent_counts(n_windows: int, p_send: float) -> tuple:
    """Integer windows per joint choice, summing exactly to ``n_windows``."""
    probs = {(a, b): (p_send if a else 1 - p_send) * (p_send if b else 1 - p_send) for a, b in CELLS}
    raw = {c: n_windows * p for c, p in probs.items()}
    floor = {c: int(math.floor(v)) for c, v in raw.items()}
    short = n_windows - sum(floor.values())
    for c in sorted(CELLS, key=lambda c: (floor[c] - raw[c], c))[:short]:
        floor[c] += 1
    return tuple(tuple(floor[a, b] for b in (0, 1)) for a in (0, 1))


def _arm_etas(channel: ChannelSpec, detectors) -> tuple[float, float, tuple, tuple]:
    eta_a = arm_transmittance(channel, None, "A")
    eta_b = arm_transmittance(channel, None, "B")
    eff = tuple(d.efficiency * d.window_retention for d in detectors)
    dark = tuple(d.dark_per_window for d in detectors)
    return eta_a, eta_b, eff, dark


def cell_click_probabilities(params, channel, detectors, order: int = 32, destructive_channel: int = 0) -> dict:
    """Phase-averaged click probability per cell and channel."""
    if order < 1:
        raise ValueError("quadrature order must be >= 1")
    eta_a, eta_b, eff, dark = _arm_etas(channel, detectors)
    if channel.phase_sigma == 0.0:
        nodes, weights = np.zeros(1), np.ones(1)
    else:
        z, w = np.polynomial.hermite_e.hermegauss(order)
        nodes, weights = channel.phase_sigma * z, w / math.sqrt(2.0 * math.pi)
    out = {}
    for cell in CELLS:
        p0, p1 = click_probabilities(params, eta_a, eta_b, cell, nodes, dark, eff, destructive_channel)
        out[cell] = (float(np.dot(weights, p0)), float(np.dot(weights, p1)))
    return out


def expected_count_table(
    params: ProtocolParams,
    channel: ChannelSpec,
    detectors=PAPER_DETECTORS,
    integrate_phase: int = 32,
    destructive_channel: int = 0,
) -> CountTable:
    """Expected detections for ``params.n_windows`` windows.

    Counts are rounded to integers; the unrounded expectations are kept in
    ``CountTable.expected``.
    """
    if integrate_phase < 8:
        raise ValueError("quadrature order must be >= 8")
    probs = cell_click_probabilities(params, channel, detectors, integrate_phase, destructive_channel)
    sent = sent_counts(params.n_windows, params.p_send)
    exp = tuple(tuple(tuple(sent[a][b] * p for p in probs[a, b]) for b in (0, 1)) for a in (0, 1))
    det = tuple(tuple(tuple(int(round(x)) for x in exp[a][b]) for b in (0, 1)) for a in (0, 1))
    return CountTable(sent, det, exp)


def simulate_count_table_mc(
    params: ProtocolParams,
    channel: ChannelSpec,
    detectors=PAPER_DETECTORS,
    n_windows_mc: int = 1_000_000,
    seed: int = 0,
    chunk: int = 1_000_000,
    destructive_channel: int = 0,
) -> CountTable:
    """Window-by-window Monte Carlo of send choices, phase and clicks.

    Each chunk draws from its own stream spawned from ``seed``, so chunks
    can be run anywhere and summed in any order.
    """
    if n_windows_mc < 1:
        raise ValueError("n_windows_mc must be >= 1")
    eta_a, eta_b, eff, dark = _arm_etas(channel, detectors)
    n_chunks = -(-n_windows_mc // chunk)
    streams = np.random.SeedSequence(seed).spawn(n_chunks)
    sent = np.zeros((2, 2), dtype=np.int64)
    det = np.zeros((2, 2, 2), dtype=np.int64)
    for i, ss in enumerate(streams):
        n = min(chunk, n_windows_mc - i * chunk)
        s, d = _mc_chunk(params, channel, eta_a, eta_b, eff, dark, n, np.random.default_rng(ss), destructive_channel)
        sent += s
        det += d
    return CountTable(sent.tolist(), det.tolist())


def _mc_chunk(params, channel, eta_a, eta_b, eff, dark, n, rng, destructive_channel):
    a = rng.random(n) < params.p_send
    b = rng.random(n) < params.p_send
    dphi = rng.normal(0.0, channel.phase_sigma, n) if channel.phase_sigma > 0 else np.zeros(n)
    x_a = eta_a * params.mu_a * a
    x_b = eta_b * params.mu_b * b
    i_minus, i_plus = port_intensities(x_a, x_b, dphi)
    i_minus = np.maximum(i_minus, 0.0)
    ports = {destructive_channel: i_minus, 1 - destructive_channel: i_plus}
    clicks = []
    for ch in (0, 1):
        p = 1.0 - (1.0 - dark[ch]) * np.exp(-ports[ch] * eff[ch])
        clicks.append(rng.random(n) < p)
    cell = 2 * a.astype(np.int64) + b.astype(np.int64)
    sent = np.bincount(cell, minlength=4).reshape(2, 2)
    det = np.stack([np.bincount(cell, weights=c, minlength=4) for c in clicks], axis=-1)
    return sent, det.reshape(2, 2, 2).astype(np.int64)
