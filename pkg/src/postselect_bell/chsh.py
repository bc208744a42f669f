"""Correlation estimates, the CHSH combination and bound checks."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .classical import Direction3, ReadoutConvention, TrialRecords, oracle_correlation
from .errors import ArgumentError, EmptySubensembleError

CLASSICAL_BOUND = 2.0
TSIRELSON_BOUND = 2.0 * np.sqrt(2.0)


@dataclass(frozen=True)
class CorrelationEstimate:
    mean: float
    std_error: float
    n_total: int
    n_kept: int

    def __post_init__(self):
        if not -1.0 - 1e-12 <= self.mean <= 1.0 + 1e-12:
            raise ArgumentError(f"correlation mean {self.mean} outside [-1, 1]")
        if self.std_error < 0 or self.n_kept > self.n_total:
            raise ArgumentError("inconsistent correlation estimate")

    @classmethod
    def exact(cls, value: float) -> "CorrelationEstimate":
        """Wrap an analytic value (no sampling error, no trials)."""
        return cls(float(value), 0.0, 0, 0)

    @classmethod
    def from_products(cls, products: np.ndarray, n_total: int) -> "CorrelationEstimate":
        n = int(products.size)
        mean = float(products.mean())
        se = float(products.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
        return cls(mean, se, int(n_total), n)


@dataclass(frozen=True)
class ChshConfig:
    a: object
    a_prime: object
    b: object
    b_prime: object


@dataclass(frozen=True)
class ChshValue:
    value: float
    terms: tuple[float, float, float, float]
    std_error: float = 0.0
    max_over_placements: float = 0.0

    def violates_classical(self, tol: float = 0.0) -> bool:
        return self.value > CLASSICAL_BOUND + tol

    def violates_tsirelson(self, tol: float = 0.0) -> bool:
        return self.value > TSIRELSON_BOUND + tol


def figure_config() -> ChshConfig:
    """Coplanar settings 45 degrees apart: b' at 45, a at 90, b at 135, a' at 180."""
    return ChshConfig(
        a=Direction3.in_plane(90.0),
        a_prime=Direction3.in_plane(180.0),
        b=Direction3.in_plane(135.0),
        b_prime=Direction3.in_plane(45.0),
    )


def estimate_correlation(records, pair: tuple[int, int], postselect: bool = False) -> CorrelationEstimate:
    if not isinstance(records, TrialRecords):
        records = TrialRecords.from_records(list(records))
    alpha, beta = records.pair(pair)
    n_total = int(alpha.size)
    if n_total == 0:
        raise ArgumentError(f"no records for setting pair {pair}")
    prod = alpha.astype(np.float64) * beta.astype(np.float64)
    if postselect:
        prod = prod[(alpha != 0) & (beta != 0)]
        if prod.size == 0:
            raise EmptySubensembleError(
                f"postselection rejected all {n_total} trials of setting pair {pair}")
    return CorrelationEstimate.from_products(prod, n_total)


def _mean(e) -> float:
    return float(e.mean) if isinstance(e, CorrelationEstimate) else float(e)


def _se(e) -> float:
    return float(e.std_error) if isinstance(e, CorrelationEstimate) else 0.0


def chsh_combination(terms: Sequence[float], minus_index: int = 3) -> float:
    signs = np.ones(4)
    signs[minus_index] = -1.0
    return float(abs(np.dot(signs, np.asarray(terms, dtype=float))))


def chsh_value(e_ab, e_ab_prime, e_a_prime_b, e_a_prime_b_prime) -> ChshValue:
    """|<ab> + <ab'> + <a'b> - <a'b'>| with root-sum-square standard error.

    Accepts :class:`CorrelationEstimate` objects or plain floats.
    """
    est = (e_ab, e_ab_prime, e_a_prime_b, e_a_prime_b_prime)
    terms = tuple(_mean(e) for e in est)
    se = float(np.sqrt(sum(_se(e) ** 2 for e in est)))
    best = max(chsh_combination(terms, k) for k in range(4))
    return ChshValue(chsh_combination(terms, 3), terms, se, best)


def oracle_chsh(config: ChshConfig, postselect: bool = False,
                convention: ReadoutConvention = ReadoutConvention()) -> ChshValue:
    pairs = ((config.a, config.b), (config.a, config.b_prime),
             (config.a_prime, config.b), (config.a_prime, config.b_prime))
    return chsh_value(*(oracle_correlation(x, y, postselect, convention) for x, y in pairs))


def _random_unit(rng: np.random.Generator, planar: bool) -> Direction3:
    if planar:
        return Direction3.in_plane(float(rng.uniform(0.0, 360.0)))
    v = rng.standard_normal(3)
    return Direction3.from_vector(v)


def random_configs(n_configs: int, seed: int) -> list[ChshConfig]:
    """Alternating coplanar / general random 4-tuples of settings."""
    rng = np.random.default_rng([int(seed), 0xC45])
    out = []
    for k in range(n_configs):
        planar = k % 2 == 0
        out.append(ChshConfig(*(_random_unit(rng, planar) for _ in range(4))))
    return out


def scan_classical_chsh(n_configs: int, seed: int, postselect: bool = False,
                        convention: ReadoutConvention = ReadoutConvention(),
                        include_figure: bool = True) -> list[tuple[ChshConfig, ChshValue]]:
    """Oracle CHSH values over random setting 4-tuples, sorted by value (descending).

    With ``include_figure`` the 45-degree figure configuration is evaluated as
    well.  Configurations that leave a postselected subensemble empty are
    skipped.
    """
    if n_configs < 1:
        raise ArgumentError("n_configs must be >= 1")
    configs = random_configs(n_configs, seed)
    if include_figure:
        configs.insert(0, figure_config())
    out = []
    for cfg in configs:
        try:
            out.append((cfg, oracle_chsh(cfg, postselect, convention)))
        except EmptySubensembleError:
            continue
    out.sort(key=lambda item: item[1].value, reverse=True)
    return out


def bound_flags(value: float) -> tuple[str, str]:
    return ("violates-2" if value > CLASSICAL_BOUND else "satisfies-2",
            "violates-tsirelson" if value > TSIRELSON_BOUND else "satisfies-tsirelson")
