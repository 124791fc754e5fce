"""Discrete-time model of the channel phase drift and its PID compensation.

The relative phase of the two independent lasers performs a random walk.
Charlie counts reference-pulse clicks on both detectors over a short
window, forms ``R = D0 / (D0 + D1)`` and a PID loop drives a phase
modulator through a 16-bit DAC and a x2 amplifier.  Whenever the command
leaves +-10 V it is folded back by 2 V_pi, which leaves the optical phase
unchanged.

Alice's reference pulses carry an extra pi/2, so with the signal phase
locked to zero the reference interference sits at quadrature (R = 0.5),
where R is most sensitive to the phase.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class DriftProcess:
    rate_rad_per_sqrt_us: float = 0.0168
    seed: int = 0

    def __post_init__(self):
        if self.rate_rad_per_sqrt_us < 0:
            raise ValueError("drift rate must be >= 0")


@dataclass(frozen=True)
class HardwareModel:
    v_pi: float = 3.05
    dac_bits: int = 16
    dac_range_v: float = 5.0
    amp_gain: float = 2.0
    fold_threshold_v: float = 10.0
    fold_step_v: float = 6.1

    def __post_init__(self):
        if not math.isclose(self.fold_step_v, 2.0 * self.v_pi, rel_tol=1e-12):
            raise ValueError("fold_step_v must equal 2 * v_pi")
        if self.amp_gain * self.dac_range_v < self.fold_threshold_v - 1e-12:
            raise ValueError("amplified DAC range must cover the fold threshold")

    @property
    def dac_step_v(self) -> float:
        """DAC LSB before amplification."""
        return 2.0 * self.dac_range_v / 2**self.dac_bits

    def phase(self, volts):
        """Optical phase imposed by the modulator at drive ``volts``."""
        return np.pi * np.asarray(volts) / self.v_pi if np.ndim(volts) else math.pi * volts / self.v_pi

    def fold(self, volts: float) -> float:
        while volts > self.fold_threshold_v:
            volts -= self.fold_step_v
        while volts < -self.fold_threshold_v:
            volts += self.fold_step_v
        return volts

    def quantize(self, volts: float) -> float:
        """Amplified output for a requested drive, on the DAC grid."""
        half = 2 ** (self.dac_bits - 1)
        code = round(volts / self.amp_gain / self.dac_step_v)
        code = min(max(code, -half), half - 1)
        return code * self.dac_step_v * self.amp_gain


# Grid-searched over kp in [0, 0.8], ki in [0.06, 1.3], kd in {0, 0.2}
# at 0.0168 rad/sqrt(us) drift, 2.5 Mcps reference counts, 4 us windows;
# the optimum is flat around ki ~ 0.15-0.2 and prefers little kp, no kd.
DEFAULT_KP = 0.05
DEFAULT_KI = 0.17
DEFAULT_KD = 0.0


@dataclass(frozen=True)
class ControllerConfig:
    """PID gains in volts per unit of R error; the integral gain is per update."""

    kp: float = DEFAULT_KP
    ki: float = DEFAULT_KI
    kd: float = DEFAULT_KD
    integration_window_us: int = 4
    pid_cycle_ns: float = 110.0
    output_update_us: int = 1
    target_r: float = 0.5
    reference_phase: float = math.pi / 2

    def __post_init__(self):
        for name in ("kp", "ki", "kd"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if int(self.integration_window_us) != self.integration_window_us or self.integration_window_us < 1:
            raise ValueError("integration_window_us must be a positive whole number of microseconds")
        if self.pid_cycle_ns >= 1000.0 * self.output_update_us:
            raise ValueError("a PID cycle must finish within one output update")
        if not 0.0 <= self.target_r <= 1.0:
            raise ValueError("target_r must lie in [0, 1]")

    @classmethod
    def null_lock(cls, **kw) -> "ControllerConfig":
        """Lock the reference interference to its bright fringe (R = 1)."""
        return cls(target_r=1.0, reference_phase=0.0, **kw)


@dataclass
class ControllerState:
    config: ControllerConfig = field(default_factory=ControllerConfig)
    hardware: HardwareModel = field(default_factory=HardwareModel)
    integral_v: float = 0.0
    last_error: float = 0.0
    output_v: float = 0.0
    folds: int = 0


def pid_step(r_observed: float, state: ControllerState) -> float:
    """One PID update; returns the (folded, quantised) drive voltage."""
    if not 0.0 <= r_observed <= 1.0:
        raise ValueError(f"R must lie in [0, 1], got {r_observed}")
    cfg, hw = state.config, state.hardware
    err = cfg.target_r - r_observed
    state.integral_v += cfg.ki * err
    command = cfg.kp * err + state.integral_v + cfg.kd * (err - state.last_error)
    state.last_error = err
    folded = hw.fold(command)
    if folded != command:
        state.folds += 1
    # shift the integrator with the fold so the next command continues from it
    state.integral_v += folded - command
    state.output_v = hw.quantize(folded)
    return state.output_v


def step_drift(phase: float, dt_us: float, rate: float, rng: np.random.Generator) -> float:
    if dt_us <= 0:
        raise ValueError("dt_us must be > 0")
    if rate == 0.0:
        return phase
    return phase + rng.normal(0.0, rate * math.sqrt(dt_us))


def drift_path(n_steps: int, rate: float, rng: np.random.Generator, dt_us: float = 1.0) -> np.ndarray:
    """Unwrapped phase after each of ``n_steps`` steps, starting from 0."""
    if rate == 0.0:
        return np.zeros(n_steps)
    return np.cumsum(rng.normal(0.0, rate * math.sqrt(dt_us), n_steps))


def sense_counts(phase: float, ref_rate_mcps: float, window_us: float, rng: np.random.Generator) -> tuple[int, int]:
    """Poisson reference counts on D0 and D1 for one counting window."""
    if ref_rate_mcps < 0 or window_us < 0:
        raise ValueError("rates and windows must be >= 0")
    lam = ref_rate_mcps * window_us
    c = math.cos(phase / 2.0) ** 2
    return int(rng.poisson(lam * c)), int(rng.poisson(lam * (1.0 - c)))


def wrap_phase(phi):
    """Map to (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(phi), 2 * np.pi)


def folded_phase(phi):
    """Phase as recovered from interference intensity, in [0, pi]."""
    return np.abs(wrap_phase(phi))


@dataclass
class PhaseTrace:
    """Per-microsecond record of one loop run.

    ``d0``/``d1`` hold the counts of each window on the microsecond the
    window closes and zero elsewhere.
    """

    t_us: np.ndarray
    channel_phase: np.ndarray
    voltage: np.ndarray
    d0: np.ndarray
    d1: np.ndarray
    residual_phase: np.ndarray

    def __len__(self):
        return len(self.t_us)

    def to_csv(self, stride: int = 1) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t_us", "channel_phase_rad", "voltage_v", "d0", "d1", "residual_phase_rad"])
        for i in range(0, len(self.t_us), stride):
            w.writerow(
                [
                    int(self.t_us[i]),
                    f"{self.channel_phase[i]:.6f}",
                    f"{self.voltage[i]:.6f}",
                    int(self.d0[i]),
                    int(self.d1[i]),
                    f"{self.residual_phase[i]:.6f}",
                ]
            )
        return buf.getvalue()


@dataclass(frozen=True)
class LoopSummary:
    residual_std: float
    wrapped_std: float
    mean_abs_residual: float
    mean_counts_per_window: float
    n_folds: int
    feedback_on: bool
    duration_ms: float
    warmup_ms: float

    def to_dict(self) -> dict:
        return {
            "residual_std_rad": self.residual_std,
            "wrapped_std_rad": self.wrapped_std,
            "mean_abs_residual_rad": self.mean_abs_residual,
            "mean_counts_per_window": self.mean_counts_per_window,
            "n_folds": self.n_folds,
            "feedback_on": self.feedback_on,
            "duration_ms": self.duration_ms,
            "warmup_ms": self.warmup_ms,
        }


def run_loop(
    drift: DriftProcess = DriftProcess(),
    controller: ControllerConfig = ControllerConfig(),
    hardware: HardwareModel = HardwareModel(),
    duration_ms: float = 200.0,
    feedback_on: bool = True,
    seed: int | None = None,
    ref_rate_mcps: float = 2.5,
    warmup_ms: float = 1.0,
) -> tuple[PhaseTrace, LoopSummary]:
    """Simulate the stabilisation loop.

    ``residual_std`` in the summary is the spread of the residual phase as
    an interferometer would report it (folded into [0, pi]), computed
    after ``warmup_ms``.  Drift and shot noise draw from separate streams
    of ``seed`` (``drift.seed`` when ``seed`` is None), so runs with the
    feedback on and off see the same drift.
    """
    if duration_ms <= 0:
        raise ValueError("duration_ms must be > 0")
    seed = drift.seed if seed is None else seed
    drift_ss, shot_ss = np.random.SeedSequence(seed).spawn(2)
    shot = np.random.default_rng(shot_ss)
    window = int(controller.integration_window_us)
    n_windows = max(1, int(round(duration_ms * 1000.0)) // window)
    n = n_windows * window

    channel = drift_path(n, drift.rate_rad_per_sqrt_us, np.random.default_rng(drift_ss))
    voltage = np.empty(n)
    d0 = np.zeros(n, dtype=np.int64)
    d1 = np.zeros(n, dtype=np.int64)
    state = ControllerState(controller, hardware)
    rate = ref_rate_mcps  # counts per microsecond
    k_phase = math.pi / hardware.v_pi
    ref = controller.reference_phase
    cos = math.cos
    poisson = shot.poisson
    v = 0.0
    total_counts = 0
    for k in range(n_windows):
        lo = k * window
        lam0 = 0.0
        for i in range(lo, lo + window):
            voltage[i] = v
            lam0 += cos(0.5 * (channel[i] - k_phase * v + ref)) ** 2
        lam0 *= rate
        c0 = int(poisson(lam0))
        c1 = int(poisson(rate * window - lam0))
        d0[lo + window - 1] = c0
        d1[lo + window - 1] = c1
        total_counts += c0 + c1
        if feedback_on and c0 + c1 > 0:
            v = pid_step(c0 / (c0 + c1), state)

    residual = channel - k_phase * voltage
    trace = PhaseTrace(
        t_us=np.arange(1, n + 1, dtype=np.int64),
        channel_phase=channel,
        voltage=voltage,
        d0=d0,
        d1=d1,
        residual_phase=residual,
    )
    start = min(int(round(warmup_ms * 1000.0)), n - 1)
    tail = residual[start:]
    summary = LoopSummary(
        residual_std=float(np.std(folded_phase(tail))),
        wrapped_std=float(np.std(wrap_phase(tail))),
        mean_abs_residual=float(np.mean(folded_phase(tail))),
        mean_counts_per_window=total_counts / n_windows,
        n_folds=state.folds,
        feedback_on=feedback_on,
        duration_ms=n / 1000.0,
        warmup_ms=start / 1000.0,
    )
    return trace, summary
