"""Finite-key security calculus for the two-state sending-or-not-sending scheme.

All failure probabilities travel as log2(1/eps).  The collective-attack
rate is turned into a coherent-attack rate by the postselection penalty
``2 (d^2 - 1) log2(N + 1)`` bits, and the collective budget is split as
``eps_col = eps_cor + eps_bar + eps_PA + 3 eps`` with all four equal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .chernoff import LogFailureProb, binary_entropy, expectation_upper, observed_upper
from .model import (
    CountTable,
    DegenerateDataError,
    DetectorMapping,
    EffectiveTally,
    ProtocolParams,
    derive_effective_tally,
)

REPORT_SCHEMA = "scsqkd/keyrate-report/v1"

# units of the report fields, written into every report document
REPORT_UNITS = {
    "r_*_per_window": "secret bits per signal window",
    "r_bps": "secret bits per second",
    "effective_rate_hz": "signal windows per second",
    "final_key_bits": "bits",
    "n_*, m_s, leak_ec_bits": "counts of windows or bits",
    "e_*, qber_*": "fraction",
    "mu_*": "mean photon number per pulse",
    "log2_inv_*": "log2(1/failure probability), bits of security",
}

# coefficients of the perfect two-state protocol
C0 = 1.0
C1 = 1.0


@dataclass(frozen=True)
class SecurityBudget:
    """Resolved failure probabilities, all as log2(1/eps)."""

    log2_inv_eps_coh: float
    log2_inv_eps_cor: float
    log2_inv_eps_pa: float
    log2_inv_eps_bar: float
    log2_inv_eps: float

    @property
    def log2_inv_eps_col(self) -> float:
        """log2(1/eps_col) with eps_col = 6 eps."""
        return self.log2_inv_eps - math.log2(6.0)

    @property
    def xi(self) -> LogFailureProb:
        """Failure probability handed to each Chernoff invocation."""
        return LogFailureProb(self.log2_inv_eps)

    def to_dict(self) -> dict:
        return {
            "log2_inv_eps_coh": self.log2_inv_eps_coh,
            "log2_inv_eps_col": self.log2_inv_eps_col,
            "log2_inv_eps_cor": self.log2_inv_eps_cor,
            "log2_inv_eps_pa": self.log2_inv_eps_pa,
            "log2_inv_eps_bar": self.log2_inv_eps_bar,
            "log2_inv_eps": self.log2_inv_eps,
        }


def postselection_bits(n_windows: int, d: int) -> float:
    """(d^2 - 1) log2(N + 1): the log-size of the de Finetti penalty."""
    return (d * d - 1) * math.log2(n_windows + 1)


def resolve_budget(n_windows: int, eps_coh: LogFailureProb, d: int = 8) -> SecurityBudget:
    if n_windows < 1:
        raise ValueError("n_windows must be >= 1")
    if d < 2:
        raise ValueError("local dimension d must be >= 2")
    l2 = eps_coh.log2_inv_xi + postselection_bits(n_windows, d) + math.log2(6.0)
    return SecurityBudget(
        log2_inv_eps_coh=eps_coh.log2_inv_xi,
        log2_inv_eps_cor=l2,
        log2_inv_eps_pa=l2,
        log2_inv_eps_bar=l2,
        log2_inv_eps=l2,
    )


def _overlap_term(mu_up: float, mu_vac_up: float) -> float:
    # C0 + C1 - 2 exp(-x) written with expm1 so tiny intensities keep their digits
    return (
        (C0 + C1 - 2.0)
        - 2.0 * math.expm1(-mu_up / 2.0 - mu_vac_up / 2.0)
        + 2.0 * math.sqrt(-math.expm1(-mu_up) * -math.expm1(-mu_vac_up))
    )


def cbar2(mu_a_up: float, mu_b_up: float, mu_vac_up: float) -> float:
    """Cross-term coefficient of the phase-error bound."""
    for name, v in (("mu_a_up", mu_a_up), ("mu_b_up", mu_b_up), ("mu_vac_up", mu_vac_up)):
        if not v >= 0.0:
            raise ValueError(f"{name} must be >= 0, got {v}")
    t_a = _overlap_term(mu_a_up, mu_vac_up)
    t_b = _overlap_term(mu_b_up, mu_vac_up)
    # t_P >= 0 analytically; rounding can leave -1e-17 at zero intensity
    return math.sqrt(max(t_a, 0.0) * max(t_b, 0.0))


@dataclass(frozen=True)
class PhaseErrorBound:
    e_ph_bar: float
    n_ph_bar: float
    n_ph_expected: float
    n_o_up: float
    n_b_up: float
    cbar2: float


def phase_error_bound(params: ProtocolParams, tally: EffectiveTally, budget: SecurityBudget) -> PhaseErrorBound:
    """Upper bound on the phase-flip error rate of the untagged bits."""
    if tally.n_z <= 0:
        raise DegenerateDataError("no effective Z windows")
    xi = budget.xi
    p0, px = params.p_vac, params.p_send
    n = float(params.n_windows)
    o_up = expectation_upper(tally.n_o, xi)
    b_up = expectation_upper(tally.n_b, xi)
    c2 = cbar2(params.mu_a_up, params.mu_b_up, params.mu_vac_up)
    bracket = (
        C0**2 / p0**2 * o_up
        + C1**2 / px**2 * b_up
        + c2**2 * n
        + 2.0 * C0 * C1 / (p0 * px) * math.sqrt(o_up * b_up)
        + 2.0 * C0 * c2 / p0 * math.sqrt(n * o_up)
        + 2.0 * C1 * c2 / px * math.sqrt(n * b_up)
    )
    expected = p0 * px / 2.0 * bracket
    n_ph = observed_upper(expected, xi)
    return PhaseErrorBound(
        e_ph_bar=n_ph / tally.n_z,
        n_ph_bar=n_ph,
        n_ph_expected=expected,
        n_o_up=o_up,
        n_b_up=b_up,
        cbar2=c2,
    )


def leak_ec(params: ProtocolParams, tally: EffectiveTally) -> float:
    """Bits revealed by error correction, f * M_s * H(E_Z)."""
    return params.ec_inefficiency * tally.m_s * binary_entropy(tally.e_z)


def key_rate_collective(
    params: ProtocolParams, tally: EffectiveTally, budget: SecurityBudget, e_ph_bar: float
) -> float:
    """Key bits per window secure against collective attacks (may be negative)."""
    d = params.dimension_d
    e = min(max(e_ph_bar, 0.0), 0.5)
    bits = (
        tally.n_z * (1.0 - binary_entropy(e))
        - leak_ec(params, tally)
        - (1.0 + budget.log2_inv_eps_cor)  # log2(2/eps_cor)
        - 2.0 * budget.log2_inv_eps_pa
        - (d + 3) * math.sqrt(tally.n_z * (1.0 + budget.log2_inv_eps_bar))
    )
    return bits / params.n_windows


def key_rate_coherent(r_col: float, n_windows: int, d: int = 8) -> float:
    """Coherent-attack rate: collective rate less the postselection penalty."""
    return r_col - 2.0 * postselection_bits(n_windows, d) / n_windows


@dataclass(frozen=True)
class KeyRateReport:
    r_col: float
    r_coh: float
    r_bps: float
    e_ph_bar: float
    n_ph_bar: float
    leak_ec: float
    n_o_up: float
    n_b_up: float
    n_ph_expected: float
    cbar2: float
    tally: EffectiveTally
    budget: SecurityBudget
    params: ProtocolParams
    effective_rate_hz: float = 1e8
    name: str = ""
    extra: dict = field(default_factory=dict, compare=False)

    @property
    def r_coh_clamped(self) -> float:
        return max(self.r_coh, 0.0)

    @property
    def key_bits(self) -> float:
        """Final key length in bits (clamped at zero)."""
        return self.r_coh_clamped * self.params.n_windows

    def to_dict(self) -> dict:
        doc = {
            "schema": REPORT_SCHEMA,
            "dataset": self.name,
            "rates": {
                "r_col_per_window": self.r_col,
                "r_coh_per_window": self.r_coh,
                "r_coh_clamped_per_window": self.r_coh_clamped,
                "r_bps": self.r_bps,
                "effective_rate_hz": self.effective_rate_hz,
                "final_key_bits": self.key_bits,
            },
            "phase_error": {
                "e_ph_bar": self.e_ph_bar,
                "n_ph_bar": self.n_ph_bar,
                "n_ph_expected_bound": self.n_ph_expected,
                "n_o_expected_upper": self.n_o_up,
                "n_b_expected_upper": self.n_b_up,
                "cbar2": self.cbar2,
            },
            "error_correction": {"leak_ec_bits": self.leak_ec, "ec_inefficiency": self.params.ec_inefficiency},
            "tally": self.tally.to_dict(),
            "budget_log2_inv": self.budget.to_dict(),
            "params": self.params.to_dict(),
            "units": dict(REPORT_UNITS),
        }
        if self.extra:
            doc["extra"] = dict(self.extra)
        return doc


def analyze(
    params: ProtocolParams,
    counts: CountTable,
    mapping: DetectorMapping = DetectorMapping(),
    eps_coh: LogFailureProb = LogFailureProb.from_prob(1e-10),
    effective_rate_hz: float = 1e8,
    name: str = "",
) -> KeyRateReport:
    """Full pipeline from a count table to coherent-attack key rate."""
    tally = derive_effective_tally(counts, mapping)
    d = params.dimension_d
    budget = resolve_budget(params.n_windows, eps_coh, d)
    if tally.n_z == 0:
        # nothing to distil; report the penalties alone
        pe = PhaseErrorBound(math.inf, math.inf, math.inf, 0.0, 0.0, cbar2(params.mu_a_up, params.mu_b_up, params.mu_vac_up))
    else:
        pe = phase_error_bound(params, tally, budget)
    r_col = key_rate_collective(params, tally, budget, pe.e_ph_bar if tally.n_z else 0.5)
    r_coh = key_rate_coherent(r_col, params.n_windows, d)
    return KeyRateReport(
        r_col=r_col,
        r_coh=r_coh,
        r_bps=r_coh * effective_rate_hz,
        e_ph_bar=pe.e_ph_bar,
        n_ph_bar=pe.n_ph_bar,
        leak_ec=leak_ec(params, tally),
        n_o_up=pe.n_o_up,
        n_b_up=pe.n_b_up,
        n_ph_expected=pe.n_ph_expected,
        cbar2=pe.cbar2,
        tally=tally,
        budget=budget,
        params=params,
        effective_rate_hz=effective_rate_hz,
        name=name,
    )


def analyze_dataset(ds, mapping: DetectorMapping = DetectorMapping()) -> KeyRateReport:
    """``analyze`` driven by a :class:`~scsqkd.model.Dataset`."""
    return analyze(
        ds.params,
        ds.counts,
        mapping,
        LogFailureProb.from_prob(ds.eps_coh),
        ds.effective_rate_hz,
        ds.name,
    )
