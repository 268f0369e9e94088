"""
Bookmaker odds to coherent three-way probabilities.

Two methods are provided: basic normalization by the booksum, and Shin's
insider-trading correction with the insider rate z found by bracketing
root-finding on g(z) = sum(pi(z)) - 1 over [0, 0.5].
"""
from __future__ import annotations

import logging
import math
from abc import ABC, abstractmethod
from typing import Any, ClassVar, Dict, List, Optional, Tuple, Type

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, model_validator
from scipy.optimize import brentq

from .errors import DegenerateOdds, InvalidRate, InvalidSimplex, NonPositiveOdd, NoRoot, UnparseableRow

log = logging.getLogger(__name__)

OUTCOMES: Tuple[str, str, str] = ("win", "draw", "loss")
SHIN_Z_UPPER = 0.5
SHIN_XTOL = 1e-14
SIMPLEX_TOL = 1e-9


class DecimalOddsTriple(BaseModel):
    """Quoted decimal odds for home win, draw and away win."""
    model_config = ConfigDict(frozen=True)

    win: float
    draw: float
    loss: float

    @model_validator(mode="after")
    def _check_odds(self) -> "DecimalOddsTriple":
        for name, value in zip(OUTCOMES, self.as_tuple()):
            if not math.isfinite(value) or value <= 1.0:
                raise NonPositiveOdd(f"Decimal odd for {name} must exceed 1.0", outcome=name, value=value)
        return self

    def as_tuple(self) -> Tuple[float, float, float]:
        return (self.win, self.draw, self.loss)


class OddsTriple(BaseModel):
    """Inverse odds o_i = 1/d_i; their sum is the booksum."""
    model_config = ConfigDict(frozen=True)

    o_win: float
    o_draw: float
    o_loss: float

    @model_validator(mode="after")
    def _check_inverse(self) -> "OddsTriple":
        for value in self.as_tuple():
            if not math.isfinite(value) or value <= 0.0 or value >= 1.0:
                raise DegenerateOdds("Inverse odds must lie in (0, 1)", value=value)
        return self

    def as_tuple(self) -> Tuple[float, float, float]:
        return (self.o_win, self.o_draw, self.o_loss)

    @property
    def booksum(self) -> float:
        return math.fsum(self.as_tuple())

    @property
    def overround(self) -> float:
        return self.booksum - 1.0


class ProbTriple(BaseModel):
    """
    Three-way probabilities. Entries are checked to lie in [0, 1]; the simplex
    condition is checked by require_simplex since Shin's unnormalized
    probabilities share this type.
    """
    model_config = ConfigDict(frozen=True)

    p_win: float
    p_draw: float
    p_loss: float

    @model_validator(mode="after")
    def _check_entries(self) -> "ProbTriple":
        for value in self.as_tuple():
            if not math.isfinite(value) or value < 0.0 or value > 1.0:
                raise InvalidSimplex("Probabilities must lie in [0, 1]", value=value)
        return self

    @classmethod
    def from_values(cls, values) -> "ProbTriple":
        p_win, p_draw, p_loss = (float(v) for v in values)
        return cls(p_win=p_win, p_draw=p_draw, p_loss=p_loss)

    def as_tuple(self) -> Tuple[float, float, float]:
        return (self.p_win, self.p_draw, self.p_loss)

    def as_array(self) -> np.ndarray:
        return np.array(self.as_tuple())

    @property
    def total(self) -> float:
        return math.fsum(self.as_tuple())

    def is_simplex(self, tol: float = SIMPLEX_TOL) -> bool:
        return abs(self.total - 1.0) <= tol

    def require_simplex(self, tol: float = SIMPLEX_TOL, interior: bool = False) -> "ProbTriple":
        if not self.is_simplex(tol):
            raise InvalidSimplex("Probabilities must sum to 1", total=self.total)
        if interior and any(p <= 0.0 or p >= 1.0 for p in self.as_tuple()):
            raise InvalidSimplex("Probabilities must lie strictly inside (0, 1)", probs=self.as_tuple())
        return self


class ShinResult(BaseModel):
    """Shin probabilities at the fitted insider rate."""
    model_config = ConfigDict(frozen=True)

    probs: ProbTriple
    z: float
    residual: float
    fallback: bool = False


def invert_decimal_odds(d: DecimalOddsTriple) -> OddsTriple:
    # model_construct bypasses validation, so check again
    for name, value in zip(OUTCOMES, d.as_tuple()):
        if not value > 1.0:
            raise NonPositiveOdd(f"Decimal odd for {name} must exceed 1.0", outcome=name, value=value)
    o_win, o_draw, o_loss = (1.0 / v for v in d.as_tuple())
    return OddsTriple(o_win=o_win, o_draw=o_draw, o_loss=o_loss)


def basic_normalize(o: OddsTriple) -> ProbTriple:
    """p_i = o_i / booksum."""
    beta = o.booksum
    if not beta > 0.0:
        raise DegenerateOdds("Booksum must be positive", booksum=beta)
    return ProbTriple.from_values(v / beta for v in o.as_tuple())


def _shin_values(values: Tuple[float, float, float], beta: float, z: float) -> List[float]:
    return [
        (math.sqrt(z * z + 4.0 * (1.0 - z) * v * v / beta) - z) / (2.0 * (1.0 - z))
        for v in values
    ]


def shin_probabilities(o: OddsTriple, z: float) -> ProbTriple:
    """
    Shin's probabilities at a given insider rate z. The output sums to 1 only
    at the fitted z and is not renormalized here.
    """
    if not (0.0 <= z < 1.0) or math.isnan(z):
        raise InvalidRate(f"Insider rate must lie in [0, 1), got {z}", z=z)
    return ProbTriple.from_values(_shin_values(o.as_tuple(), o.booksum, z))


def estimate_shin_z(o: OddsTriple) -> ShinResult:
    """
    Solve sum(pi(z)) = 1 for z in [0, 0.5].

    Booksums below 1 fall back to basic normalization with z = 0 and
    fallback=True. NoRoot is raised when the overround is too large for a
    root to exist below 0.5.
    """
    values = o.as_tuple()
    beta = o.booksum

    if beta < 1.0 - 1e-12:
        probs = basic_normalize(o)
        log.warning("odds.shin_fallback booksum=%.6f", beta)
        return ShinResult(probs=probs, z=0.0, residual=abs(probs.total - 1.0), fallback=True)

    def g(z: float) -> float:
        return math.fsum(_shin_values(values, beta, z)) - 1.0

    g0 = g(0.0)
    if g0 <= 1e-15:
        z_star = 0.0
    else:
        g_upper = g(SHIN_Z_UPPER)
        if g_upper > 0.0:
            raise NoRoot("No insider rate below 0.5 balances these odds", booksum=beta)
        z_star = brentq(g, 0.0, SHIN_Z_UPPER, xtol=SHIN_XTOL, maxiter=200)
        z_star = min(z_star, math.nextafter(SHIN_Z_UPPER, 0.0))

    raw = _shin_values(values, beta, z_star)
    total = math.fsum(raw)
    residual = abs(total - 1.0)
    probs = ProbTriple.from_values(v / total for v in raw)
    return ShinResult(probs=probs, z=z_star, residual=residual)


class OddsConverter(ABC):
    """Base class for odds-to-probability conversion methods."""

    method: ClassVar[str]

    @abstractmethod
    def convert(self, o: OddsTriple) -> ProbTriple:
        ...

    def details(self, o: OddsTriple) -> Dict[str, Any]:
        """Probabilities plus method-specific columns for tabular output."""
        probs = self.convert(o)
        return {
            "booksum": o.booksum,
            "p_win": probs.p_win,
            "p_draw": probs.p_draw,
            "p_loss": probs.p_loss,
        }


class BasicConverter(OddsConverter):
    method = "basic"

    def convert(self, o: OddsTriple) -> ProbTriple:
        return basic_normalize(o)


class ShinConverter(OddsConverter):
    method = "shin"

    def convert(self, o: OddsTriple) -> ProbTriple:
        return estimate_shin_z(o).probs

    def details(self, o: OddsTriple) -> Dict[str, Any]:
        result = estimate_shin_z(o)
        return {
            "booksum": o.booksum,
            "p_win": result.probs.p_win,
            "p_draw": result.probs.p_draw,
            "p_loss": result.probs.p_loss,
            "z": result.z,
            "residual": result.residual,
            "fallback": result.fallback,
        }


_CONVERTERS: Dict[str, Type[OddsConverter]] = {
    BasicConverter.method: BasicConverter,
    ShinConverter.method: ShinConverter,
}


def get_converter(method: str) -> OddsConverter:
    try:
        return _CONVERTERS[method.lower()]()
    except KeyError:
        raise ValueError(f"Unknown probability method: {method}") from None


def odds_from_cells(cells: Tuple[Any, Any, Any]) -> Optional[DecimalOddsTriple]:
    """Build decimal odds from three raw cells; None when any cell is empty."""
    values = []
    for cell in cells:
        if cell is None or (isinstance(cell, float) and math.isnan(cell)):
            return None
        text = str(cell).strip()
        if not text:
            return None
        values.append(float(text))
    return DecimalOddsTriple(win=values[0], draw=values[1], loss=values[2])


def convert_frame(frame: pd.DataFrame, method: str, bookmakers: Dict[str, str],
                  first_line: int = 2) -> pd.DataFrame:
    """
    Convert every bookmaker triple of a raw odds table into probabilities.

    One output row per (input row, bookmaker) with complete odds. Cells that are
    present but not valid odds raise UnparseableRow with the file line number.
    """
    converter = get_converter(method)
    id_columns = [c for c in ("Date", "HomeTeam", "AwayTeam") if c in frame.columns]
    available = {
        name: prefix for name, prefix in bookmakers.items()
        if all(f"{prefix}{s}" in frame.columns for s in "HDA")
    }
    rows: List[Dict[str, Any]] = []
    for offset, record in enumerate(frame.to_dict("records")):
        line = first_line + offset
        for name, prefix in available.items():
            cells = tuple(record[f"{prefix}{s}"] for s in "HDA")
            try:
                odds = odds_from_cells(cells)
                if odds is None:
                    continue
                details = converter.details(invert_decimal_odds(odds))
            except (ValueError, NonPositiveOdd, DegenerateOdds, NoRoot) as e:
                raise UnparseableRow(f"Invalid odds for {name} on line {line}: {e}",
                                     line=line, bookmaker=name) from e
            row = {col: record[col] for col in id_columns}
            row.update({"line": line, "bookmaker": name})
            row.update(details)
            rows.append(row)
    log.debug("odds.frame_converted method=%s rows=%d", method, len(rows))
    return pd.DataFrame(rows)
