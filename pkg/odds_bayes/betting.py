"""
Forecast accuracy and betting backtests.

Strategies decide bets from a three-way forecast and one bookmaker's decimal
odds; the backtest settles them against realized outcomes and aggregates
profit per match with standard errors for each bookmaker.
"""
from __future__ import annotations

import json
import logging
import math
from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, ClassVar, Dict, List, Mapping, Optional, Sequence, Tuple, Type, Union

import numpy as np
import pandas as pd

from .data import OUTCOME_INDEX, AugmentedMatch, Dataset
from .errors import DegenerateOdds, LengthMismatch, NoRoot
from .odds import DecimalOddsTriple, ProbTriple, get_converter, invert_decimal_odds
from .predict import MatchForecast

log = logging.getLogger(__name__)

Forecast = Union[ProbTriple, MatchForecast]


class Outcome(Enum):
    WIN = "win"
    DRAW = "draw"
    LOSS = "loss"
    NO_BET = "nobet"


_OUTCOMES: Tuple[Outcome, Outcome, Outcome] = (Outcome.WIN, Outcome.DRAW, Outcome.LOSS)


def _probs(forecast: Forecast) -> Tuple[float, float, float]:
    if isinstance(forecast, MatchForecast):
        return forecast.probs.as_tuple()
    return forecast.as_tuple()


def expected_values(probs: Sequence[float], odds: DecimalOddsTriple) -> Tuple[float, float, float]:
    """Expected profit of a unit stake on each outcome: p_i * d_i - 1."""
    return tuple(p * d - 1.0 for p, d in zip(probs, odds.as_tuple()))  # type: ignore[return-value]


def profit_variance(p: float, d: float) -> float:
    """Variance of the profit of a unit stake at decimal odd d with success probability p."""
    return p * (1.0 - p) * d * d


@dataclass(frozen=True)
class BetRecord:
    """One bet (or a decision not to bet). profit is None until settled."""
    match_id: int
    outcome: Outcome
    stake: float = 0.0
    odd: float = 0.0
    probability: float = 0.0
    expected_profit: float = 0.0
    variance: float = 0.0
    bookmaker: str = ""
    profit: Optional[float] = None

    @classmethod
    def no_bet(cls, match_id: int, bookmaker: str = "") -> "BetRecord":
        return cls(match_id=match_id, outcome=Outcome.NO_BET, bookmaker=bookmaker)

    @classmethod
    def place(cls, match_id: int, index: int, stake: float, probs: Sequence[float],
              odds: DecimalOddsTriple, bookmaker: str = "") -> "BetRecord":
        p, d = probs[index], odds.as_tuple()[index]
        return cls(
            match_id=match_id,
            outcome=_OUTCOMES[index],
            stake=stake,
            odd=d,
            probability=p,
            expected_profit=stake * (p * d - 1.0),
            variance=stake * stake * profit_variance(p, d),
            bookmaker=bookmaker,
        )

    @property
    def placed(self) -> bool:
        return self.outcome is not Outcome.NO_BET and self.stake > 0.0

    def settle(self, realized: Union[str, Outcome]) -> "BetRecord":
        """stake*(odd-1) when the outcome happens, -stake otherwise, 0 for no bet."""
        realized = Outcome(realized)
        if self.outcome is Outcome.NO_BET:
            profit = 0.0
        elif self.outcome is realized:
            profit = self.stake * (self.odd - 1.0)
        else:
            profit = -self.stake
        return replace(self, profit=profit)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["outcome"] = self.outcome.value
        return data


class BettingStrategy(ABC):
    """Decides the bets to place on one match at one bookmaker's odds."""

    name: ClassVar[str]

    @abstractmethod
    def decide(self, forecast: Forecast, odds: DecimalOddsTriple, match_id: int = 0,
               bookmaker: str = "") -> List[BetRecord]:
        ...


class HighestReturnStrategy(BettingStrategy):
    """
    One unit on the outcome with the highest expected return. Ties go to the
    higher forecast probability, then to win, draw, loss in that order. With
    only_positive_ev, nothing is bet unless the best return is positive.
    """
    name = "A"

    def __init__(self, only_positive_ev: bool = False):
        self.only_positive_ev = only_positive_ev

    def decide(self, forecast: Forecast, odds: DecimalOddsTriple, match_id: int = 0,
               bookmaker: str = "") -> List[BetRecord]:
        probs = _probs(forecast)
        ev = expected_values(probs, odds)
        best = min(range(3), key=lambda i: (-ev[i], -probs[i], i))
        if self.only_positive_ev and ev[best] <= 0.0:
            return [BetRecord.no_bet(match_id, bookmaker)]
        return [BetRecord.place(match_id, best, 1.0, probs, odds, bookmaker)]


class VariabilityStrategy(BettingStrategy):
    """
    Stake EV/Var on the outcome with the highest positive expected return,
    clamped to [0, 1], where Var is the variance of the unit-stake profit.
    """
    name = "B"

    def decide(self, forecast: Forecast, odds: DecimalOddsTriple, match_id: int = 0,
               bookmaker: str = "") -> List[BetRecord]:
        probs = _probs(forecast)
        ev = expected_values(probs, odds)
        best = min(range(3), key=lambda i: (-ev[i], -probs[i], i))
        if ev[best] <= 0.0:
            return [BetRecord.no_bet(match_id, bookmaker)]
        variance = profit_variance(probs[best], odds.as_tuple()[best])
        stake = 1.0 if variance <= 0.0 else min(1.0, max(0.0, ev[best] / variance))
        return [BetRecord.place(match_id, best, stake, probs, odds, bookmaker)]


class NeverBetStrategy(BettingStrategy):
    name = "never"

    def decide(self, forecast: Forecast, odds: DecimalOddsTriple, match_id: int = 0,
               bookmaker: str = "") -> List[BetRecord]:
        return [BetRecord.no_bet(match_id, bookmaker)]


class BetAllStrategy(BettingStrategy):
    """One unit on each of the three outcomes."""
    name = "all"

    def decide(self, forecast: Forecast, odds: DecimalOddsTriple, match_id: int = 0,
               bookmaker: str = "") -> List[BetRecord]:
        probs = _probs(forecast)
        return [BetRecord.place(match_id, i, 1.0, probs, odds, bookmaker) for i in range(3)]


_STRATEGIES: Dict[str, Type[BettingStrategy]] = {
    cls.name: cls for cls in (HighestReturnStrategy, VariabilityStrategy, NeverBetStrategy, BetAllStrategy)
}


def get_strategy(name: str, only_positive_ev: bool = False) -> BettingStrategy:
    try:
        cls = _STRATEGIES[name]
    except KeyError:
        raise ValueError(f"Unknown betting strategy: {name}") from None
    if cls is HighestReturnStrategy:
        return HighestReturnStrategy(only_positive_ev)
    return cls()


def strategy_a(forecast: Forecast, odds: DecimalOddsTriple, only_positive_ev: bool = False,
               match_id: int = 0) -> BetRecord:
    return HighestReturnStrategy(only_positive_ev).decide(forecast, odds, match_id)[0]


def strategy_b(forecast: Forecast, odds: DecimalOddsTriple, match_id: int = 0) -> BetRecord:
    return VariabilityStrategy().decide(forecast, odds, match_id)[0]


def average_correct_probability(forecasts: Sequence[Forecast], outcomes: Sequence[Union[str, int]]) -> float:
    """Mean probability assigned to the realized outcome."""
    if len(forecasts) != len(outcomes):
        raise LengthMismatch(f"{len(forecasts)} forecasts for {len(outcomes)} outcomes",
                             forecasts=len(forecasts), outcomes=len(outcomes))
    if not forecasts:
        raise LengthMismatch("No matches to score", forecasts=0, outcomes=0)
    hits = []
    for forecast, outcome in zip(forecasts, outcomes):
        index = outcome if isinstance(outcome, (int, np.integer)) else OUTCOME_INDEX[outcome]
        hits.append(_probs(forecast)[int(index)])
    return math.fsum(hits) / len(hits)


def bookmaker_forecasts(matches: Sequence[AugmentedMatch], method: str,
                        bookmakers: Optional[Sequence[str]] = None) -> List[Optional[ProbTriple]]:
    """
    Forecasts from the bookmakers themselves: each available bookmaker's odds
    converted with method, averaged. None for matches without usable odds.
    """
    converter = get_converter(method)
    forecasts: List[Optional[ProbTriple]] = []
    for match in matches:
        triples = []
        for name, odds in match.record.odds.items():
            if bookmakers and name not in bookmakers:
                continue
            try:
                triples.append(converter.convert(invert_decimal_odds(odds)).as_array())
            except (NoRoot, DegenerateOdds):
                continue
        if not triples:
            forecasts.append(None)
            continue
        mean = np.mean(triples, axis=0)
        forecasts.append(ProbTriple.from_values(mean / mean.sum()))
    return forecasts


def accuracy_table(sources: Mapping[str, Sequence[Optional[Forecast]]],
                   outcomes: Sequence[str]) -> pd.DataFrame:
    """Average correct probability per forecast source over matches every source covers."""
    names = list(sources)
    common = [i for i in range(len(outcomes)) if all(sources[n][i] is not None for n in names)]
    rows = []
    for name in names:
        if common:
            value = average_correct_probability([sources[name][i] for i in common], [outcomes[i] for i in common])
        else:
            value = float("nan")
        rows.append({"source": name, "matches": len(common), "average_correct_probability": value})
    return pd.DataFrame(rows)


@dataclass
class BookmakerResult:
    """
    Profit summary of one strategy at one bookmaker, or pooled over
    bookmakers and leagues. profits and placed hold one entry per evaluated
    match; the standard error covers only matches where a bet was placed.
    """
    bookmaker: str
    strategy: str
    matches: int
    bets: int
    skipped: int
    total_profit: float
    mean_profit: float
    se: float
    total_stake: float = 0.0
    bankroll: List[float] = field(default_factory=list)
    league: str = ""
    profits: List[float] = field(default_factory=list, repr=False)
    placed: List[bool] = field(default_factory=list, repr=False)

    @property
    def profit_per_stake(self) -> float:
        return self.total_profit / self.total_stake if self.total_stake > 0 else 0.0

    def summary(self) -> Dict[str, Any]:
        return {
            "league": self.league,
            "bookmaker": self.bookmaker,
            "strategy": self.strategy,
            "matches": self.matches,
            "bets": self.bets,
            "skipped": self.skipped,
            "total_stake": self.total_stake,
            "total_profit": self.total_profit,
            "mean_profit": self.mean_profit,
            "se": self.se,
            "profit_per_stake": self.profit_per_stake,
        }


def _summarize(bookmaker: str, strategy: str, profits: List[float], placed: List[bool], bets: int,
               skipped: int, stake: float, league: str = "") -> BookmakerResult:
    bankroll: List[float] = []
    running = 0.0
    for p in profits:
        running += p
        bankroll.append(running)
    n = len(profits)
    bet_profits = [p for p, b in zip(profits, placed) if b]
    k = len(bet_profits)
    se = float(np.std(bet_profits, ddof=1)) / math.sqrt(k) if k > 1 else 0.0
    return BookmakerResult(bookmaker=bookmaker, strategy=strategy, matches=n, bets=bets, skipped=skipped,
                           total_profit=running, mean_profit=running / n if n else 0.0, se=se,
                           total_stake=stake, bankroll=bankroll, league=league, profits=list(profits),
                           placed=list(placed))


def pool_results(results: Sequence[BookmakerResult], strategy: str, bookmaker: str = "all",
                 league: Optional[str] = None) -> BookmakerResult:
    """
    One summary over several results, e.g. every bookmaker of a league or the
    pooled rows of several leagues. league defaults to the shared league of
    the inputs, or "all" when they differ.
    """
    if league is None:
        leagues = {r.league for r in results}
        league = leagues.pop() if len(leagues) == 1 else "all"
    return _summarize(bookmaker, strategy,
                      [p for r in results for p in r.profits],
                      [b for r in results for b in r.placed],
                      sum(r.bets for r in results), sum(r.skipped for r in results),
                      sum(r.total_stake for r in results), league)


@dataclass
class BacktestReport:
    strategy: str
    results: List[BookmakerResult]
    pooled: BookmakerResult
    bets: List[BetRecord]

    def result(self, bookmaker: str) -> BookmakerResult:
        for r in self.results:
            if r.bookmaker == bookmaker:
                return r
        raise KeyError(bookmaker)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.summary() for r in [*self.results, self.pooled]])

    def bets_frame(self) -> pd.DataFrame:
        return pd.DataFrame([b.to_dict() for b in self.bets])

    def to_dict(self) -> Dict[str, Any]:
        return {
            "strategy": self.strategy,
            "bookmakers": [r.summary() for r in self.results],
            "pooled": self.pooled.summary(),
        }

    def save_json(self, path: Union[str, Path]) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)


def backtest(forecasts: Sequence[Forecast], matches: Union[Dataset, Sequence[AugmentedMatch]],
             strategy: BettingStrategy, bookmakers: Optional[Sequence[str]] = None,
             league: str = "") -> BacktestReport:
    """
    Apply strategy to every match at every selected bookmaker and settle the
    bets. Profit per match is the sum over the match's bets; matches without
    odds at a bookmaker are skipped and counted. The pooled row covers every
    (bookmaker, match) pair. Every row carries league.
    """
    if isinstance(matches, Dataset):
        matches = matches.matches
    if len(forecasts) != len(matches):
        raise LengthMismatch(f"{len(forecasts)} forecasts for {len(matches)} matches",
                             forecasts=len(forecasts), matches=len(matches))
    if bookmakers is None:
        seen: Dict[str, None] = {}
        for m in matches:
            seen.update(dict.fromkeys(m.record.odds))
        bookmakers = list(seen)

    results: List[BookmakerResult] = []
    all_bets: List[BetRecord] = []
    for bookmaker in bookmakers:
        profits: List[float] = []
        placed: List[bool] = []
        bets = skipped = 0
        stake = 0.0
        for match_id, (forecast, match) in enumerate(zip(forecasts, matches)):
            odds = match.record.odds.get(bookmaker)
            if odds is None or forecast is None:
                skipped += 1
                continue
            settled = [b.settle(match.record.outcome) for b in strategy.decide(forecast, odds, match_id, bookmaker)]
            profits.append(sum(b.profit for b in settled))
            placed.append(any(b.placed for b in settled))
            bets += sum(1 for b in settled if b.placed)
            stake += sum(b.stake for b in settled if b.placed)
            all_bets.extend(settled)
        results.append(_summarize(bookmaker, strategy.name, profits, placed, bets, skipped, stake, league))
        if skipped:
            log.info("betting.skipped bookmaker=%s matches=%d", bookmaker, skipped)
    pooled = pool_results(results, strategy.name, league=league)
    log.info("betting.backtest_done strategy=%s bookmakers=%d mean_profit=%.4f se=%.4f bets=%d",
             strategy.name, len(results), pooled.mean_profit, pooled.se, pooled.bets)
    return BacktestReport(strategy=strategy.name, results=results, pooled=pooled, bets=all_bets)
