"""Derivative-free search for source intensities and sending probability.

The objective is the coherent-attack key rate of the expected count
table the channel model predicts.  The search evaluates a coarse grid,
then runs coordinate descent with shrinking steps from the best grid
points, the caller's starting point and a few seeded random points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .channel import PAPER_DETECTORS, ChannelSpec, expected_count_table
from .chernoff import LogFailureProb
from .model import DatasetError, ProtocolParams
from .security import analyze

AXES = ("mu_a", "mu_b", "p_send")


@dataclass(frozen=True)
class SearchBox:
    mu_a: tuple[float, float] = (1e-4, 0.05)
    mu_b: tuple[float, float] = (1e-4, 0.05)
    p_send: tuple[float, float] = (0.02, 0.5)

    def __post_init__(self):
        for ax in AXES:
            lo, hi = getattr(self, ax)
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
                raise ValueError(f"empty search range for {ax}: [{lo}, {hi}]")
        if self.mu_a[0] < 0 or self.mu_b[0] < 0:
            raise ValueError("intensities must be >= 0")
        if self.p_send[0] <= 0 or self.p_send[1] >= 1:
            raise ValueError("p_send range must lie inside (0, 1)")

    @classmethod
    def point(cls, mu_a: float, mu_b: float, p_send: float) -> "SearchBox":
        return cls((mu_a, mu_a), (mu_b, mu_b), (p_send, p_send))

    def bounds(self) -> np.ndarray:
        return np.array([getattr(self, ax) for ax in AXES], dtype=float)


@dataclass(frozen=True)
class RateModel:
    """How a candidate point is turned into a key rate."""

    channel: ChannelSpec
    detectors: tuple = PAPER_DETECTORS
    eps_coh: LogFailureProb = LogFailureProb.from_prob(1e-10)
    n_windows: int = 363_000_000_000
    upper_ratio: float = 1.0215
    extinction_ratio_db: float = 70.0
    ec_inefficiency: float = 1.16
    dimension_d: int = 8
    quadrature_order: int = 32

    def params(self, mu_a: float, mu_b: float, p_send: float) -> ProtocolParams:
        return ProtocolParams.from_intensities(
            self.n_windows,
            p_send,
            mu_a,
            mu_b,
            self.upper_ratio,
            self.extinction_ratio_db,
            ec_inefficiency=self.ec_inefficiency,
            dimension_d=self.dimension_d,
        )

    def rate(self, mu_a: float, mu_b: float, p_send: float) -> float:
        params = self.params(mu_a, mu_b, p_send)
        counts = expected_count_table(params, self.channel, self.detectors, self.quadrature_order)
        try:
            return analyze(params, counts, eps_coh=self.eps_coh).r_coh
        except DatasetError:
            return -math.inf


@dataclass
class OptimizationResult:
    params: ProtocolParams
    r_coh: float
    point: tuple[float, float, float]
    evaluations: int
    history: list = field(default_factory=list, repr=False)


def optimize_parameters(
    channel: ChannelSpec,
    detectors=PAPER_DETECTORS,
    eps_coh: LogFailureProb = LogFailureProb.from_prob(1e-10),
    search_box: SearchBox = SearchBox(),
    *,
    seed: int = 0,
    start: tuple[float, float, float] | None = None,
    n_windows: int = 363_000_000_000,
    grid: int = 5,
    n_restarts: int = 3,
    n_random: int = 2,
    rel_tol: float = 1e-3,
    model: RateModel | None = None,
) -> OptimizationResult:
    """Maximise the coherent-attack key rate over ``search_box``.

    Deterministic for a given box, seed and model.  Among equal rates the
    candidate found first wins.
    """
    model = model or RateModel(channel, tuple(detectors), eps_coh, n_windows)
    bounds = search_box.bounds()
    width = bounds[:, 1] - bounds[:, 0]
    cache: dict[tuple, float] = {}
    history: list = []

    def f(x) -> float:
        key = tuple(float(v) for v in x)
        if key not in cache:
            cache[key] = model.rate(*key)
            history.append((key, cache[key]))
        return cache[key]

    if np.all(width == 0):
        x = tuple(float(v) for v in bounds[:, 0])
        r = f(x)
        return OptimizationResult(model.params(*x), r, x, len(cache), history)

    axes = [np.linspace(lo, hi, grid) if hi > lo else np.array([lo]) for lo, hi in bounds]
    candidates = [tuple(float(v) for v in p) for p in _product(axes)]
    scored = sorted(((f(c), -i, c) for i, c in enumerate(candidates)), reverse=True)
    starts = [c for _, _, c in scored[:n_restarts]]
    if start is not None:
        starts.insert(0, tuple(float(v) for v in np.clip(start, bounds[:, 0], bounds[:, 1])))
    rng = np.random.default_rng(seed)
    for _ in range(n_random):
        starts.append(tuple(float(v) for v in bounds[:, 0] + rng.random(3) * width))

    best_x, best_r = None, -math.inf
    for x0 in starts:
        x, r = _coordinate_descent(f, np.array(x0), bounds, width, rel_tol)
        if r > best_r:
            best_x, best_r = x, r
    return OptimizationResult(model.params(*best_x), best_r, best_x, len(cache), history)


def _product(axes):
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=-1)


def _coordinate_descent(f, x, bounds, width, rel_tol):
    x = x.astype(float)
    r = f(x)
    step = 0.25 * width
    while np.any(step > rel_tol * width):
        improved = False
        for i in range(len(x)):
            if step[i] <= rel_tol * width[i]:
                continue
            for sign in (1.0, -1.0):
                y = x.copy()
                y[i] = min(max(x[i] + sign * step[i], bounds[i, 0]), bounds[i, 1])
                if y[i] == x[i]:
                    continue
                ry = f(y)
                if ry > r:
                    x, r, improved = y, ry, True
                    break
        if not improved:
            step = step / 2.0
    return tuple(float(v) for v in x), r
