"""Source calibration: extinction ratio, intensity bound, patterning."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import docio
from .model import InvariantError, ParseError, resolve_dataset, vacuum_upper_bound

CALIBRATION_SCHEMA = "scsqkd/calibration/v1"

PATTERNS = ("VV", "VS", "SV", "SS")


@dataclass(frozen=True)
class ExtinctionResult:
    ratio_db: float
    lower_bound: bool = False


def extinction_ratio_db(
    n_signal: float, n_vacuum: float, factor: float = 4.0, dark_counts: float = 0.0
) -> ExtinctionResult:
    """Signal/vacuum extinction ratio from windowed counts.

    ``factor`` corrects for the sequence ratio (four vacuum windows per
    signal window).  Dark counts are only subtracted from the vacuum
    count when ``dark_counts`` is given.  With no vacuum counts left the
    result is a lower bound computed as if one count had been seen.
    """
    if n_signal < 0 or n_vacuum < 0:
        raise ValueError("counts must be >= 0")
    vac = n_vacuum - dark_counts
    if vac <= 0:
        return ExtinctionResult(10.0 * math.log10(n_signal * factor / 1.0), lower_bound=True)
    return ExtinctionResult(10.0 * math.log10(n_signal * factor / vac))


@dataclass(frozen=True)
class IntensityBound:
    mean: float
    std: float
    mu_up_ratio: float


def intensity_upper_bound(samples: Sequence[float], k_sigma: float = 4.0) -> IntensityBound:
    """Mean, unbiased std and ``1 + k std / mean`` of per-pulse readings."""
    x = np.asarray(samples, dtype=float)
    if x.size < 2:
        raise ValueError("need at least two samples")
    return intensity_bound_from_stats(float(x.mean()), float(x.std(ddof=1)), k_sigma)


def intensity_bound_from_stats(mean: float, std: float, k_sigma: float = 4.0) -> IntensityBound:
    if mean <= 0:
        raise ValueError("mean intensity must be > 0")
    if k_sigma < 0 or std < 0:
        raise ValueError("k_sigma and std must be >= 0")
    return IntensityBound(mean, std, 1.0 + k_sigma * std / mean)


@dataclass(frozen=True)
class PatterningResult:
    rates: dict
    signal_difference: float  # |R_VS - R_SS| / R_SS
    vacuum_difference: float  # |R_SV - R_VV| / R_VV


def patterning_rates(pattern_counts: Mapping[str, tuple[float, float]]) -> PatterningResult:
    """Second-pulse click rates per two-pulse pattern.

    ``pattern_counts[p] = (sent, detected)`` for each of VV, VS, SV, SS.
    """
    rates = {}
    for p in PATTERNS:
        if p not in pattern_counts:
            raise ValueError(f"missing pattern {p}")
        sent, detected = pattern_counts[p]
        if sent <= 0:
            raise ValueError(f"pattern {p} has no transmissions")
        rates[p] = detected / sent
    return patterning_from_rates(rates)


def patterning_from_rates(rates: Mapping[str, float]) -> PatterningResult:
    missing = [p for p in PATTERNS if p not in rates]
    if missing:
        raise ValueError(f"missing pattern(s) {', '.join(missing)}")
    r = {p: float(rates[p]) for p in PATTERNS}
    return PatterningResult(
        rates=r,
        signal_difference=abs(r["VS"] - r["SS"]) / r["SS"],
        vacuum_difference=abs(r["SV"] - r["VV"]) / r["VV"],
    )


def histogram(samples: Sequence[float], bins: int = 50) -> list[tuple[float, float, int]]:
    """Binned samples as (lower edge, upper edge, count) rows."""
    counts, edges = np.histogram(np.asarray(samples, dtype=float), bins=bins)
    return [(float(edges[i]), float(edges[i + 1]), int(c)) for i, c in enumerate(counts)]


@dataclass
class CalibrationBlock:
    extinction: ExtinctionResult | None = None
    intensity: IntensityBound | None = None
    patterning: PatterningResult | None = None
    histogram: list = field(default_factory=list)

    def mu_vac_up(self, mu_a_up: float, mu_b_up: float) -> float:
        if self.extinction is None:
            raise ValueError("no extinction measurement")
        return vacuum_upper_bound(mu_a_up, mu_b_up, self.extinction.ratio_db)

    def to_dict(self) -> dict:
        doc: dict = {"schema": CALIBRATION_SCHEMA + "/result"}
        if self.extinction is not None:
            doc["extinction"] = {
                "ratio_db": self.extinction.ratio_db,
                "lower_bound": self.extinction.lower_bound,
            }
        if self.intensity is not None:
            doc["intensity"] = {
                "mean": self.intensity.mean,
                "std": self.intensity.std,
                "mu_up_ratio": self.intensity.mu_up_ratio,
                "mu_up_percent": 100.0 * self.intensity.mu_up_ratio,
            }
        if self.patterning is not None:
            doc["patterning"] = {
                "rates": dict(self.patterning.rates),
                "signal_difference_percent": 100.0 * self.patterning.signal_difference,
                "vacuum_difference_percent": 100.0 * self.patterning.vacuum_difference,
            }
        if self.histogram:
            doc["intensity_histogram"] = [list(row) for row in self.histogram]
        return doc


def calibrate_document(doc: Mapping) -> CalibrationBlock:
    """Evaluate every calibration section present in ``doc``."""
    if doc.get("schema", CALIBRATION_SCHEMA) != CALIBRATION_SCHEMA:
        raise ParseError(f"unsupported calibration schema {doc.get('schema')!r}")
    block = CalibrationBlock()
    try:
        if "extinction" in doc:
            e = doc["extinction"]
            block.extinction = extinction_ratio_db(
                e["n_signal"], e["n_vacuum"], e.get("factor", 4.0), e.get("dark_counts", 0.0)
            )
        if "intensity" in doc:
            i = doc["intensity"]
            k = i.get("k_sigma", 4.0)
            if "samples" in i:
                block.intensity = intensity_upper_bound(i["samples"], k)
                block.histogram = histogram(i["samples"], i.get("bins", 50))
            else:
                block.intensity = intensity_bound_from_stats(i["mean"], i["std"], k)
        if "patterning" in doc:
            p = doc["patterning"]
            if "counts" in p:
                block.patterning = patterning_rates({k: tuple(v) for k, v in p["counts"].items()})
            else:
                block.patterning = patterning_from_rates(p["rates"])
    except (KeyError, TypeError) as exc:
        raise ParseError(f"calibration document is missing {exc}") from None
    except ValueError as exc:
        raise InvariantError("calibration", str(exc)) from None
    return block


def read_calibration(name_or_path) -> CalibrationBlock:
    return calibrate_document(docio.loads(resolve_dataset(name_or_path).read_text(encoding="utf-8")))
