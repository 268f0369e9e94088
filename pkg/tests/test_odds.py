import math

import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError

from odds_bayes.errors import InvalidRate, InvalidSimplex, NonPositiveOdd, NoRoot, UnparseableRow
from odds_bayes.odds import (
    DecimalOddsTriple,
    OddsTriple,
    ProbTriple,
    basic_normalize,
    convert_frame,
    estimate_shin_z,
    get_converter,
    invert_decimal_odds,
    odds_from_cells,
    shin_probabilities,
)


def inverse(a, b, c) -> OddsTriple:
    return OddsTriple(o_win=a, o_draw=b, o_loss=c)


@pytest.mark.parametrize("decimal,expected", [
    ((2.0, 2.0, 2.0), (0.5, 0.5, 0.5)),
    ((1.5, 4.0, 8.0), (0.666667, 0.25, 0.125)),
])
def test_invert_decimal_odds(decimal, expected):
    o = invert_decimal_odds(DecimalOddsTriple(win=decimal[0], draw=decimal[1], loss=decimal[2]))
    assert o.as_tuple() == pytest.approx(expected, abs=1e-6)


def test_odd_of_one_is_rejected():
    with pytest.raises((NonPositiveOdd, ValidationError)):
        DecimalOddsTriple(win=1.0, draw=3.0, loss=3.0)


def test_invert_rechecks_unvalidated_triples():
    d = DecimalOddsTriple.model_construct(win=1.0, draw=3.0, loss=3.0)
    with pytest.raises(NonPositiveOdd):
        invert_decimal_odds(d)


@pytest.mark.parametrize("o,expected", [
    ((1 / 3, 1 / 3, 1 / 3), (1 / 3, 1 / 3, 1 / 3)),
    ((0.5, 0.35, 0.25), (0.454545, 0.318182, 0.227273)),
    ((0.9, 0.2, 0.1), (0.75, 0.166667, 0.083333)),
])
def test_basic_normalize(o, expected):
    probs = basic_normalize(inverse(*o))
    assert probs.as_tuple() == pytest.approx(expected, abs=1e-6)
    assert probs.is_simplex()


def test_booksum_and_overround():
    o = inverse(0.5, 0.35, 0.25)
    assert o.booksum == pytest.approx(1.10)
    assert o.overround == pytest.approx(0.10)


def test_shin_at_zero():
    assert shin_probabilities(inverse(0.5, 0.3, 0.2), 0.0).as_tuple() == pytest.approx((0.5, 0.3, 0.2))
    got = shin_probabilities(inverse(0.5, 0.35, 0.25), 0.0).as_tuple()
    assert got == pytest.approx((0.476731, 0.333712, 0.238366), abs=1e-6)


def test_shin_symmetry_and_range():
    probs = shin_probabilities(inverse(0.4, 0.4, 0.4), 0.17)
    assert probs.p_win == pytest.approx(probs.p_draw) == pytest.approx(probs.p_loss)
    with pytest.raises(InvalidRate):
        shin_probabilities(inverse(0.4, 0.4, 0.4), 1.0)
    with pytest.raises(InvalidRate):
        shin_probabilities(inverse(0.4, 0.4, 0.4), -0.1)


def test_estimate_shin_z_booksum_one():
    result = estimate_shin_z(inverse(0.5, 0.3, 0.2))
    assert result.z == 0.0
    assert result.probs.as_tuple() == pytest.approx((0.5, 0.3, 0.2))
    assert not result.fallback


def test_estimate_shin_z_solves_the_balance():
    o = inverse(0.5, 0.35, 0.25)
    result = estimate_shin_z(o)
    assert 0.0 < result.z < 0.5
    raw = shin_probabilities(o, result.z)
    assert raw.total == pytest.approx(1.0, abs=1e-10)
    assert result.probs.is_simplex(1e-12)
    # favourite-longshot correction moves mass toward the favourite
    assert result.probs.p_win > basic_normalize(o).p_win


def test_estimate_shin_z_symmetric():
    result = estimate_shin_z(inverse(0.4, 0.4, 0.4))
    assert result.probs.as_tuple() == pytest.approx((1 / 3, 1 / 3, 1 / 3), abs=1e-12)


def test_shin_falls_back_below_booksum_one(caplog):
    result = estimate_shin_z(inverse(0.45, 0.3, 0.2))
    assert result.fallback
    assert result.z == 0.0
    assert result.probs.as_tuple() == pytest.approx(basic_normalize(inverse(0.45, 0.3, 0.2)).as_tuple())
    assert "odds.shin_fallback" in caplog.text


def test_shin_no_root_for_huge_overround():
    with pytest.raises(NoRoot):
        estimate_shin_z(inverse(0.9, 0.9, 0.9))


def test_prob_triple_validation():
    with pytest.raises((InvalidSimplex, ValidationError)):
        ProbTriple(p_win=1.2, p_draw=0.0, p_loss=0.0)
    unnormalized = ProbTriple(p_win=0.5, p_draw=0.5, p_loss=0.5)
    with pytest.raises(InvalidSimplex):
        unnormalized.require_simplex()
    with pytest.raises(InvalidSimplex):
        ProbTriple(p_win=1.0, p_draw=0.0, p_loss=0.0).require_simplex(interior=True)


def test_converters():
    o = inverse(0.5, 0.35, 0.25)
    assert get_converter("basic").convert(o) == basic_normalize(o)
    assert get_converter("SHIN").convert(o) == estimate_shin_z(o).probs
    assert "z" in get_converter("shin").details(o)
    with pytest.raises(ValueError):
        get_converter("power")


def test_odds_from_cells():
    assert odds_from_cells(("1.57", "4.20", "6.00")).as_tuple() == (1.57, 4.2, 6.0)
    assert odds_from_cells(("1.57", "", "6.00")) is None
    assert odds_from_cells((float("nan"), 3.0, 3.0)) is None
    with pytest.raises(ValueError):
        odds_from_cells(("abc", "3", "3"))


def test_convert_frame():
    frame = pd.DataFrame({
        "Date": ["14/08/16", "15/08/16"],
        "HomeTeam": ["Arsenal", "Chelsea"],
        "AwayTeam": ["Liverpool", "Everton"],
        "B365H": ["1.57", "2.10"], "B365D": ["4.20", "3.40"], "B365A": ["6.00", ""],
        "BWH": ["1.60", "2.05"], "BWD": ["4.00", "3.30"], "BWA": ["5.75", "3.60"],
    })
    table = convert_frame(frame, "basic", {"Bet365": "B365", "BetAndWin": "BW"})
    assert len(table) == 3
    assert list(table["line"]) == [2, 2, 3]
    sums = table["p_win"] + table["p_draw"] + table["p_loss"]
    assert all(math.isclose(s, 1.0, abs_tol=1e-12) for s in sums)


def test_convert_frame_reports_bad_line():
    frame = pd.DataFrame({"HomeTeam": ["A"], "AwayTeam": ["B"], "B365H": ["0.9"], "B365D": ["3"], "B365A": ["3"]})
    with pytest.raises(UnparseableRow) as info:
        convert_frame(frame, "shin", {"Bet365": "B365"})
    assert info.value.context.metadata["line"] == 2


def test_random_overrounds():
    rng = np.random.default_rng(2024)
    checked = 0
    while checked < 1000:
        p = rng.dirichlet([3.0, 3.0, 3.0])
        if p.min() < 0.03 or p.max() > 0.8:
            continue
        o = inverse(*(p * rng.uniform(1.01, 1.15)))
        basic = basic_normalize(o)
        shin = estimate_shin_z(o)
        assert abs(basic.total - 1.0) <= 1e-9
        assert abs(shin.probs.total - 1.0) <= 1e-9
        assert shin.residual <= 1e-10
        assert 0.0 <= shin.z < 0.5
        assert not shin.fallback
        favourite, longshot = int(np.argmax(p)), int(np.argmin(p))
        assert shin.probs.as_tuple()[favourite] >= basic.as_tuple()[favourite] - 1e-12
        assert shin.probs.as_tuple()[longshot] <= basic.as_tuple()[longshot] + 1e-12
        checked += 1
