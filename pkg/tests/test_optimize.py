import math

import pytest

from scsqkd.channel import paper_channel, paper_detectors
from scsqkd.chernoff import LogFailureProb
from scsqkd.optimize import RateModel, SearchBox, optimize_parameters

EPS = LogFailureProb.from_prob(1e-10)
CH = paper_channel(25.25, 25.25)


def test_search_box_validation():
    with pytest.raises(ValueError):
        SearchBox(mu_a=(0.2, 0.1))
    with pytest.raises(ValueError):
        SearchBox(p_send=(0.1, 1.0))
    with pytest.raises(ValueError):
        SearchBox(mu_b=(-0.1, 0.1))
    with pytest.raises(ValueError):
        SearchBox(mu_a=(0.0, math.inf))


def test_collapsed_box_evaluates_the_point():
    model = RateModel(CH, paper_detectors(), EPS)
    res = optimize_parameters(CH, paper_detectors(), EPS, SearchBox.point(0.0061, 0.0122, 0.2), model=model)
    assert res.evaluations == 1
    assert res.r_coh == model.rate(0.0061, 0.0122, 0.2)


def test_zero_intensity_gives_no_key():
    model = RateModel(CH, paper_detectors(), EPS)
    assert model.rate(0.0, 0.0, 0.2) < 0


def test_small_search_beats_start_and_is_deterministic():
    box = SearchBox(mu_a=(0.004, 0.02), mu_b=(0.008, 0.04), p_send=(0.1, 0.35))
    start = (0.0061, 0.0122, 0.2)
    kw = dict(seed=3, start=start, grid=3, n_restarts=1, n_random=1, rel_tol=1e-2)
    a = optimize_parameters(CH, paper_detectors(), EPS, box, **kw)
    b = optimize_parameters(CH, paper_detectors(), EPS, box, **kw)
    assert a.point == b.point and a.r_coh == b.r_coh
    assert a.r_coh >= RateModel(CH, paper_detectors(), EPS).rate(*start)
    for (lo, hi), x in zip(box.bounds(), a.point):
        assert lo <= x <= hi
