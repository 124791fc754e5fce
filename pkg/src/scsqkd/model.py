"""Domain types, dataset ingestion and effective-window tallies.

A dataset document holds the protocol parameters of one run together with
its count table (windows sent per joint send choice and detections per
channel).  The schema is described in ``README.md``; the five published
runs ship as named fixtures (``paper_0km`` ... ``paper_101p1km``).
"""

from __future__ import annotations

import math
import numbers
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

from . import docio

DATASET_SCHEMA = "scsqkd/dataset/v1"

CELLS = ((0, 0), (0, 1), (1, 0), (1, 1))


class DatasetError(Exception):
    """Base class for problems with an input dataset."""


class ParseError(DatasetError):
    """The document could not be read or lacks a required entry."""


class InvariantError(DatasetError, ValueError):
    """A value violates a type invariant.  ``field`` names the offender."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class DegenerateDataError(DatasetError, ValueError):
    """The data carry no usable events (e.g. no effective windows)."""


def vacuum_upper_bound(mu_a_up: float, mu_b_up: float, extinction_ratio_db: float) -> float:
    """Upper bound on the intensity of the 'not sending' state.

    The brighter of the two coherent states attenuated by the measured
    signal/vacuum extinction ratio.
    """
    return max(mu_a_up, mu_b_up) * 10.0 ** (-extinction_ratio_db / 10.0)


@dataclass(frozen=True)
class ProtocolParams:
    """Source and post-processing parameters of one run."""

    n_windows: int
    p_send: float
    mu_a: float
    mu_b: float
    mu_a_up: float
    mu_b_up: float
    mu_vac_up: float
    ec_inefficiency: float = 1.16
    dimension_d: int = 8

    def __post_init__(self):
        if isinstance(self.n_windows, bool) or int(self.n_windows) != self.n_windows:
            raise InvariantError("n_windows", f"must be an integer, got {self.n_windows!r}")
        object.__setattr__(self, "n_windows", int(self.n_windows))
        if self.n_windows < 1:
            raise InvariantError("n_windows", "must be >= 1")
        if not 0.0 < self.p_send < 1.0:
            raise InvariantError("p_send", f"must lie in (0, 1), got {self.p_send}")
        for name in ("mu_a", "mu_b", "mu_a_up", "mu_b_up", "mu_vac_up"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0.0):
                raise InvariantError(name, f"must be finite and >= 0, got {v}")
        if self.mu_a > self.mu_a_up:
            raise InvariantError("mu_a", "exceeds its upper bound mu_a_up")
        if self.mu_b > self.mu_b_up:
            raise InvariantError("mu_b", "exceeds its upper bound mu_b_up")
        if self.mu_vac_up > min(self.mu_a_up, self.mu_b_up):
            raise InvariantError("mu_vac_up", "must not exceed min(mu_a_up, mu_b_up)")
        if not self.ec_inefficiency >= 1.0:
            raise InvariantError("ec_inefficiency", "must be >= 1")
        if int(self.dimension_d) != self.dimension_d or self.dimension_d < 1:
            raise InvariantError("dimension_d", "must be a positive integer")

    @property
    def p_vac(self) -> float:
        return 1.0 - self.p_send

    @classmethod
    def from_intensities(
        cls,
        n_windows: int,
        p_send: float,
        mu_a: float,
        mu_b: float,
        upper_ratio: float = 1.0215,
        extinction_ratio_db: float = 70.0,
        **kw,
    ) -> "ProtocolParams":
        """Build parameters whose upper bounds follow from calibration data."""
        mu_a_up = mu_a * upper_ratio
        mu_b_up = mu_b * upper_ratio
        return cls(
            n_windows=n_windows,
            p_send=p_send,
            mu_a=mu_a,
            mu_b=mu_b,
            mu_a_up=mu_a_up,
            mu_b_up=mu_b_up,
            mu_vac_up=vacuum_upper_bound(mu_a_up, mu_b_up, extinction_ratio_db),
            **kw,
        )

    def to_dict(self) -> dict:
        return {
            "n_windows": self.n_windows,
            "p_send": self.p_send,
            "mu_a": self.mu_a,
            "mu_b": self.mu_b,
            "mu_a_up": self.mu_a_up,
            "mu_b_up": self.mu_b_up,
            "mu_vac_up": self.mu_vac_up,
            "ec_inefficiency": self.ec_inefficiency,
            "dimension_d": self.dimension_d,
        }


@dataclass(frozen=True)
class CountTable:
    """Windows sent and detections registered, per joint send choice.

    ``sent[a][b]`` counts windows in which Alice chose ``a`` and Bob ``b``
    (1 = send).  ``detected[a][b][ch]`` counts clicks of channel ``ch``.
    ``expected`` optionally carries the unrounded simulator expectations
    with the same shape as ``detected``.
    """

    sent: tuple
    detected: tuple
    expected: tuple | None = field(default=None, compare=False)

    def __post_init__(self):
        try:
            sent = tuple(tuple(int(_as_count(self.sent[a][b], f"sent[{a}][{b}]")) for b in (0, 1)) for a in (0, 1))
            det = tuple(
                tuple(
                    tuple(int(_as_count(self.detected[a][b][c], f"detected[{a}][{b}][{c}]")) for c in (0, 1))
                    for b in (0, 1)
                )
                for a in (0, 1)
            )
        except (TypeError, IndexError, KeyError) as exc:
            raise InvariantError("counts", f"malformed count table ({exc})") from None
        for a, b in CELLS:
            for c in (0, 1):
                if det[a][b][c] > sent[a][b]:
                    raise InvariantError(
                        f"detected[{a}][{b}][{c}]", "exceeds the number of windows sent in that cell"
                    )
        object.__setattr__(self, "sent", sent)
        object.__setattr__(self, "detected", det)

    @property
    def n_windows(self) -> int:
        return sum(self.sent[a][b] for a, b in CELLS)

    def to_dict(self) -> dict:
        doc = {
            "sent": {f"{a}{b}": self.sent[a][b] for a, b in CELLS},
            "detected": {f"{a}{b}": list(self.detected[a][b]) for a, b in CELLS},
        }
        if self.expected is not None:
            doc["expected"] = {f"{a}{b}": [float(x) for x in self.expected[a][b]] for a, b in CELLS}
        return doc

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "CountTable":
        try:
            sent_doc, det_doc = doc["sent"], doc["detected"]
            sent = [[sent_doc[f"{a}{b}"] for b in (0, 1)] for a in (0, 1)]
            det = [[det_doc[f"{a}{b}"] for b in (0, 1)] for a in (0, 1)]
        except (KeyError, TypeError) as exc:
            raise ParseError(f"counts section is missing {exc}") from None
        expected = None
        if "expected" in doc:
            exp_doc = doc["expected"]
            expected = tuple(tuple(tuple(float(x) for x in exp_doc[f"{a}{b}"]) for b in (0, 1)) for a in (0, 1))
        return cls(sent, det, expected)


def _as_count(value, name: str) -> int:
    if isinstance(value, bool):
        raise InvariantError(name, "must be a count")
    if isinstance(value, numbers.Integral):
        value = int(value)
    elif isinstance(value, numbers.Real) and float(value).is_integer():
        value = int(value)
    if not isinstance(value, int):
        raise InvariantError(name, f"must be an integer count, got {value!r}")
    if value < 0:
        raise InvariantError(name, "must be >= 0")
    return value


@dataclass(frozen=True)
class DetectorMapping:
    """Which channel is the 'right-side' (effective) detector."""

    effective_channel: int = 0
    veto_channel: int = 1

    def __post_init__(self):
        if {self.effective_channel, self.veto_channel} != {0, 1}:
            raise InvariantError("mapping", "effective and veto channels must be 0 and 1, distinct")


@dataclass(frozen=True)
class EffectiveTally:
    n_o: int
    n_b: int
    n_z: int
    m_s: int
    e_z: float
    qber_bb: float

    def to_dict(self) -> dict:
        return {
            "n_o": self.n_o,
            "n_b": self.n_b,
            "n_z": self.n_z,
            "m_s": self.m_s,
            "e_z": self.e_z,
            "qber_bb": self.qber_bb,
        }


def effective_counts(counts: CountTable, mapping: DetectorMapping = DetectorMapping()) -> dict:
    """Effective detections per cell.

    Without per-window coincidence records a cell's effective count is taken
    to be the click count of the effective channel.
    """
    ch = mapping.effective_channel
    return {(a, b): counts.detected[a][b][ch] for a, b in CELLS}


def qber_both_send(counts: CountTable, mapping: DetectorMapping = DetectorMapping()) -> float:
    """Share of both-send detections that land on the effective channel."""
    d = counts.detected[1][1]
    total = d[0] + d[1]
    if total == 0:
        raise DegenerateDataError("no detections in both-send windows")
    return d[mapping.effective_channel] / total


def derive_effective_tally(counts: CountTable, mapping: DetectorMapping = DetectorMapping()) -> EffectiveTally:
    eff = effective_counts(counts, mapping)
    n_o = eff[0, 0]
    n_b = eff[1, 1]
    n_z = eff[0, 1] + eff[1, 0]
    m_s = n_o + n_b + n_z
    if m_s == 0:
        raise DegenerateDataError("no effective windows")
    # Alice's bit is her send choice, Bob's the negation of his:
    # Z windows agree, O and B windows are bit flips.
    e_z = (n_o + n_b) / m_s
    d = counts.detected[1][1]
    qber_bb = qber_both_send(counts, mapping) if d[0] + d[1] else 0.0
    return EffectiveTally(n_o=n_o, n_b=n_b, n_z=n_z, m_s=m_s, e_z=e_z, qber_bb=qber_bb)


@dataclass(frozen=True)
class Dataset:
    """Everything a dataset document carries."""

    name: str
    params: ProtocolParams
    counts: CountTable
    eps_coh: float = 1e-10
    effective_rate_hz: float = 1e8
    extinction_ratio_db: float | None = None
    channel: dict = field(default_factory=dict)
    reference: dict = field(default_factory=dict)

    def with_counts(self, counts: CountTable) -> "Dataset":
        return replace(self, counts=counts, params=replace(self.params, n_windows=counts.n_windows))

    def to_dict(self) -> dict:
        protocol = self.params.to_dict()
        if self.extinction_ratio_db is not None:
            protocol["extinction_ratio_db"] = self.extinction_ratio_db
        doc = {
            "schema": DATASET_SCHEMA,
            "name": self.name,
            "protocol": protocol,
            "security": {"eps_coh": self.eps_coh, "effective_rate_hz": self.effective_rate_hz},
            "counts": self.counts.to_dict(),
        }
        if self.channel:
            doc["channel"] = dict(self.channel)
        if self.reference:
            doc["reference"] = dict(self.reference)
        return doc


_PROTOCOL_REQUIRED = ("n_windows", "p_send", "mu_a", "mu_b", "mu_a_up", "mu_b_up")


def parse_dataset(doc: Any) -> Dataset:
    if not isinstance(doc, Mapping):
        raise ParseError("dataset document must be a mapping")
    schema = doc.get("schema", DATASET_SCHEMA)
    if schema != DATASET_SCHEMA:
        raise ParseError(f"unsupported schema {schema!r}")
    proto = doc.get("protocol")
    if not isinstance(proto, Mapping):
        raise ParseError("missing 'protocol' section")
    missing = [k for k in _PROTOCOL_REQUIRED if k not in proto]
    if missing:
        raise ParseError(f"protocol section lacks {', '.join(missing)}")
    if "counts" not in doc:
        raise ParseError("missing 'counts' section")

    kw = {k: proto[k] for k in _PROTOCOL_REQUIRED}
    for k in ("ec_inefficiency", "dimension_d"):
        if k in proto:
            kw[k] = proto[k]
    for k, v in kw.items():
        if isinstance(v, str) or v is None:
            raise ParseError(f"protocol.{k} is not a number: {v!r}")
    er = proto.get("extinction_ratio_db")
    if "mu_vac_up" in proto:
        kw["mu_vac_up"] = proto["mu_vac_up"]
    elif er is not None:
        kw["mu_vac_up"] = vacuum_upper_bound(kw["mu_a_up"], kw["mu_b_up"], float(er))
    else:
        raise ParseError("protocol section needs mu_vac_up or extinction_ratio_db")
    params = ProtocolParams(**kw)
    counts = CountTable.from_dict(doc["counts"])
    if counts.n_windows != params.n_windows:
        raise InvariantError(
            "counts.sent", f"cells sum to {counts.n_windows}, protocol.n_windows is {params.n_windows}"
        )
    sec = doc.get("security") or {}
    eps_coh = float(sec.get("eps_coh", 1e-10))
    if not 0.0 < eps_coh <= 1.0:
        raise InvariantError("security.eps_coh", "must lie in (0, 1]")
    return Dataset(
        name=str(doc.get("name", "")),
        params=params,
        counts=counts,
        eps_coh=eps_coh,
        effective_rate_hz=float(sec.get("effective_rate_hz", 1e8)),
        extinction_ratio_db=None if er is None else float(er),
        channel=dict(doc.get("channel") or {}),
        reference=dict(doc.get("reference") or {}),
    )


PAPER_DATASETS = ("paper_0km", "paper_25p3km", "paper_50p5km", "paper_75p7km", "paper_101p1km")


def fixture_names() -> list[str]:
    """Embedded datasets, ordered by total fibre length."""
    return list(PAPER_DATASETS)


def resolve_dataset(name_or_path: str | Path):
    """Path to a dataset given a file path or an embedded fixture name."""
    p = Path(name_or_path)
    if p.is_file():
        return p
    fixture = resources.files("scsqkd") / "data" / f"{name_or_path}.yaml"
    if fixture.is_file():
        return fixture
    raise ParseError(f"no such dataset file or fixture: {name_or_path}")


def read_dataset(name_or_path: str | Path) -> Dataset:
    src = resolve_dataset(name_or_path)
    try:
        doc = docio.loads(src.read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError) as exc:
        raise ParseError(f"cannot read {name_or_path}: {exc}") from None
    except docio.yaml.YAMLError as exc:
        raise ParseError(f"cannot parse {name_or_path}: {exc}") from None
    return parse_dataset(doc)


def load_dataset(path: str | Path) -> tuple[ProtocolParams, CountTable]:
    ds = read_dataset(path)
    return ds.params, ds.counts
