import math

import numpy as np
import pytest

from scsqkd import docio
from scsqkd.calibration import (
    calibrate_document,
    extinction_ratio_db,
    histogram,
    intensity_bound_from_stats,
    intensity_upper_bound,
    patterning_from_rates,
    patterning_rates,
    read_calibration,
)
from scsqkd.model import DatasetError, ParseError


def test_extinction_ratio_by_hand():
    r = extinction_ratio_db(1e9, 400, factor=4)
    assert r.ratio_db == pytest.approx(10 * math.log10(1e7))
    assert not r.lower_bound


def test_extinction_ratio_with_no_vacuum_counts_is_a_bound():
    r = extinction_ratio_db(1e6, 5, dark_counts=5)
    assert r.lower_bound
    assert r.ratio_db == pytest.approx(10 * math.log10(4e6))
    with pytest.raises(ValueError):
        extinction_ratio_db(-1, 1)


def test_intensity_bound_from_samples():
    x = np.array([1.0, 2.0, 3.0, 4.0])
    b = intensity_upper_bound(x, 4)
    assert b.std == pytest.approx(np.std(x, ddof=1))
    assert b.mu_up_ratio == pytest.approx(1 + 4 * b.std / 2.5)
    with pytest.raises(ValueError):
        intensity_upper_bound([1.0])
    with pytest.raises(ValueError):
        intensity_bound_from_stats(0.0, 1.0)


def test_patterning_rates():
    res = patterning_rates({"VV": (1000, 10), "VS": (1000, 501), "SV": (1000, 11), "SS": (1000, 500)})
    assert res.signal_difference == pytest.approx(0.002)
    assert res.vacuum_difference == pytest.approx(0.1)
    with pytest.raises(ValueError):
        patterning_rates({"VV": (1, 1)})
    with pytest.raises(ValueError):
        patterning_from_rates({"VV": 1.0, "VS": 1.0, "SV": 1.0})


def test_histogram_rows():
    rows = histogram(np.linspace(0, 1, 101), bins=4)
    assert len(rows) == 4
    assert sum(r[2] for r in rows) == 101
    assert rows[0][0] == 0.0 and rows[-1][1] == 1.0


def test_published_calibration_values():
    block = read_calibration("paper_calibration")
    assert round(block.extinction.ratio_db, 1) == 74.5
    assert round(100 * block.intensity.mu_up_ratio, 2) == 102.15
    assert round(100 * block.patterning.signal_difference, 2) == 0.03
    doc = block.to_dict()
    assert doc["schema"].startswith("scsqkd/calibration/")
    assert block.mu_vac_up(0.01, 0.02) < 0.02 * 1e-7


def test_samples_document_builds_histogram():
    doc = {"intensity": {"samples": [0.22, 0.23, 0.21, 0.225], "bins": 3}}
    block = calibrate_document(doc)
    assert len(block.histogram) == 3
    assert "intensity_histogram" in block.to_dict()


def test_bad_documents():
    with pytest.raises(ParseError):
        calibrate_document({"schema": "nope"})
    with pytest.raises(ParseError):
        calibrate_document({"extinction": {"n_signal": 1}})
    with pytest.raises(DatasetError):
        calibrate_document(docio.loads("patterning: {rates: {VV: 1}}"))


@pytest.mark.parametrize("c", [1e-3, 0.5, 7.0, 1e6])
def test_scale_invariance(c):
    assert extinction_ratio_db(2.5e10 * c, 3639 * c).ratio_db == pytest.approx(extinction_ratio_db(2.5e10, 3639).ratio_db)
    x = np.random.default_rng(4).normal(0.2231, 0.0012, 1000)
    assert intensity_upper_bound(x * c).mu_up_ratio == pytest.approx(intensity_upper_bound(x).mu_up_ratio)
