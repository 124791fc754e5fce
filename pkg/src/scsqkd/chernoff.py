"""Chernoff-type bounds and the binary entropy, in log-probability form.

Failure probabilities reach 2**-2456 once the postselection penalty is
paid, so nothing here ever forms xi itself; callers pass log2(1/xi).

Both bounds reduce to a one-dimensional root of a monotone function.
Writing ``t = E/X`` for the expectation bound, the defining relation

    (e^{-d} / (1-d)^{1-d})^{X/(1-d)} = xi,     t = 1/(1-d)

becomes ``X * (t - 1 - ln t) = ln(1/xi)``.  For the observation bound,
with ``s = 1 + d'``, it is ``Y * (s ln s - s + 1) = ln(1/xi)``.  Both
left-hand sides are increasing in ``t, s >= 1`` and are solved by
bisection on a doubling bracket.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

LN2 = math.log(2.0)


@dataclass(frozen=True, order=True)
class LogFailureProb:
    """A failure probability xi stored as log2(1/xi)."""

    log2_inv_xi: float

    def __post_init__(self):
        if not (math.isfinite(self.log2_inv_xi) and self.log2_inv_xi >= 0.0):
            raise ValueError(f"log2(1/xi) must be finite and >= 0, got {self.log2_inv_xi}")

    @classmethod
    def from_prob(cls, xi: float) -> "LogFailureProb":
        if not 0.0 < xi <= 1.0:
            raise ValueError(f"failure probability must lie in (0, 1], got {xi}")
        return cls(-math.log2(xi))

    @property
    def ln_inv(self) -> float:
        """ln(1/xi)."""
        return self.log2_inv_xi * LN2


def _check_count(x: float, name: str) -> float:
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"{name} must be finite, got {x}")
    if x < 0.0:
        raise ValueError(f"{name} must be >= 0, got {x}")
    return x


def _u_minus_log1p(u: float) -> float:
    """u - ln(1+u) for u >= 0, accurate near 0."""
    if u < 0.05:
        # alternating series sum_{k>=2} (-1)^k u^k / k
        term, total, k = u * u, 0.0, 2
        while True:
            contrib = term / k
            total += contrib if k % 2 == 0 else -contrib
            if contrib < 1e-18 * total:
                return total
            term *= u
            k += 1
    return u - math.log1p(u)


def _s_log_s_term(v: float) -> float:
    """(1+v) ln(1+v) - v for v >= 0, accurate near 0."""
    if v < 0.05:
        # sum_{k>=2} (-1)^k v^k / (k (k-1))
        term, total, k = v * v, 0.0, 2
        while True:
            contrib = term / (k * (k - 1))
            total += contrib if k % 2 == 0 else -contrib
            if contrib < 1e-18 * total:
                return total
            term *= v
            k += 1
    return (1.0 + v) * math.log1p(v) - v


def expectation_rate(u: float) -> float:
    """Per-count exponent of the expectation bound at ratio ``E/X = 1 + u``.

    Equals ``t - 1 - ln t``.  In the original parametrisation it is
    ``-(1/(1-d)) * (-d - (1-d) ln(1-d))`` with ``t = 1/(1-d)``.
    """
    return _u_minus_log1p(u)


def observation_rate(v: float) -> float:
    """Per-unit exponent of the observation bound at ``O/Y = 1 + v``."""
    return _s_log_s_term(v)


def _bisect_increasing(f, target: float) -> float:
    """Smallest-error x >= 0 with f(x) = target, f increasing, f(0) = 0."""
    hi = 1.0
    while f(hi) < target:
        hi *= 2.0
        if hi > 1e300:
            raise OverflowError("bracket growth failed")
    lo = 0.0
    while True:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if f(mid) < target:
            lo = mid
        else:
            hi = mid
    # pick the endpoint with the smaller residual
    return lo if abs(f(lo) - target) <= abs(f(hi) - target) else hi


def expectation_delta(x_observed: float, xi: LogFailureProb) -> float:
    """delta_1 for the expectation bound, so that E^U = X / (1 - delta_1)."""
    x = _check_count(x_observed, "x_observed")
    big_l = xi.ln_inv
    if big_l == 0.0 or x == 0.0:
        return 0.0 if big_l == 0.0 else 1.0
    u = _bisect_increasing(lambda u: x * _u_minus_log1p(u), big_l)
    return u / (1.0 + u)


def expectation_upper(x_observed: float, xi: LogFailureProb) -> float:
    """Upper bound on the expectation of a sum of Bernoulli variables.

    Given an observed value ``X``, returns ``E^U(X) = X / (1 - delta_1)``.
    For ``X = 0`` returns ``ln(1/xi)``: observing nothing at expectation
    ``E`` has probability at most ``exp(-E)``.
    """
    x = _check_count(x_observed, "x_observed")
    big_l = xi.ln_inv
    if big_l == 0.0:
        return x
    if x == 0.0:
        return big_l
    u = _bisect_increasing(lambda u: x * _u_minus_log1p(u), big_l)
    return x * (1.0 + u)


def observation_delta(y_expected: float, xi: LogFailureProb) -> float:
    """delta_1' for the observation bound, so that O^U = (1 + delta_1') Y."""
    y = _check_count(y_expected, "y_expected")
    big_l = xi.ln_inv
    if big_l == 0.0 or y == 0.0:
        return 0.0 if big_l == 0.0 else math.inf
    return _bisect_increasing(lambda v: y * _s_log_s_term(v), big_l)


def observed_upper(y_expected: float, xi: LogFailureProb) -> float:
    """Upper bound ``O^U(Y) = (1 + delta_1') Y`` on an observed value.

    ``Y = 0`` with ``xi < 1`` returns ``ln(1/xi)``.
    """
    y = _check_count(y_expected, "y_expected")
    big_l = xi.ln_inv
    if big_l == 0.0:
        return y
    if y == 0.0:
        return big_l
    v = _bisect_increasing(lambda v: y * _s_log_s_term(v), big_l)
    return y * (1.0 + v)


def binary_entropy(x: float) -> float:
    """Shannon entropy of a biased coin, in bits."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"binary entropy needs 0 <= x <= 1, got {x}")
    if x == 0.0 or x == 1.0:
        return 0.0
    return -x * math.log2(x) - (1.0 - x) * math.log2(1.0 - x)
