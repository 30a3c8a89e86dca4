"""Truncation-index distributions and the Gamma factor they induce.

A truncation distribution is a pmf for the random iteration count Q on
{i_min, ..., i_max}. The variance of a truncated single-sample estimator is
controlled by

    Gamma = sum_j rho^{e (j-1)} / P(Q = j)

with e = 2 for solves and e = 4 for log quadratic forms, where rho is the CG
(resp. Lanczos quadrature) convergence rate implied by the condition number.
The constrained minimization of such weighted sums has a closed form, which
yields the Gamma-optimal sampling distributions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

SOLVE = "solve"
LOGQF = "logqf"
_FLAVORS = (SOLVE, LOGQF)

MIN_PMF_MASS = 1e-300

DIST_KINDS = ("exponential", "geometric", "gamma_optimal")


def _check_flavor(flavor: str):
    if flavor not in _FLAVORS:
        raise ValueError(f"unknown flavor {flavor!r}, expected one of {_FLAVORS}")


def rho_solve(kappa: float) -> float:
    """CG convergence rate (sqrt(kappa) - 1) / (sqrt(kappa) + 1)."""
    if kappa < 1.0:
        raise ValueError(f"condition number must be >= 1, got {kappa}")
    s = np.sqrt(kappa)
    return float((s - 1.0) / (s + 1.0))


def rho_logqf(kappa: float) -> float:
    """Lanczos quadrature rate (sqrt(kappa+1) - 1) / (sqrt(kappa+1) + 1)."""
    if kappa < 1.0:
        raise ValueError(f"condition number must be >= 1, got {kappa}")
    s = np.sqrt(kappa + 1.0)
    return float((s - 1.0) / (s + 1.0))


@dataclass(frozen=True)
class TruncationDistribution:
    """pmf of the random truncation index Q on {i_min, ..., i_max}."""
    i_min: int
    i_max: int
    pmf: np.ndarray

    def __post_init__(self):
        if self.i_min < 1:
            raise ValueError(f"i_min must be >= 1, got {self.i_min}")
        if self.i_max < self.i_min:
            raise ValueError(f"i_max must be >= i_min, got [{self.i_min}, {self.i_max}]")
        p = np.asarray(self.pmf, dtype=float)
        if p.shape != (self.i_max - self.i_min + 1,):
            raise ValueError(f"pmf length {p.shape} does not match support "
                             f"[{self.i_min}, {self.i_max}]")
        if np.any(p < MIN_PMF_MASS):
            raise ValueError("pmf mass underflow: every entry must exceed 1e-300")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"pmf sums to {p.sum()!r}, expected 1")
        object.__setattr__(self, "pmf", p)

    @property
    def support(self) -> np.ndarray:
        return np.arange(self.i_min, self.i_max + 1)

    def prob(self, j: int) -> float:
        if not (self.i_min <= j <= self.i_max):
            raise ValueError(f"index {j} outside support [{self.i_min}, {self.i_max}]")
        return float(self.pmf[j - self.i_min])

    def expected_q(self) -> float:
        return float(np.dot(self.support, self.pmf))

    def survival(self) -> np.ndarray:
        """P(Q >= i) for i in the support (Russian roulette weights)."""
        return np.cumsum(self.pmf[::-1])[::-1]


def _normalized(i_min: int, i_max: int, weights: np.ndarray) -> TruncationDistribution:
    total = weights.sum()
    if not np.isfinite(total) or total <= 0.0:
        raise ValueError("truncation weights do not normalize to a distribution")
    return TruncationDistribution(i_min, i_max, weights / total)


def make_exponential(c: float, i_min: int, i_max: int) -> TruncationDistribution:
    """P(Q = j) proportional to exp(-c j); c = 0.5 is the conventional choice."""
    if c <= 0.0:
        raise ValueError(f"exponential rate must be positive, got {c}")
    j = np.arange(i_min, i_max + 1)
    # shift by i_min before exponentiating; the constant cancels in the
    # normalization and avoids underflow on deep supports
    return _normalized(i_min, i_max, np.exp(-c * (j - i_min)))


def make_geometric(i_min: int, i_max: int) -> TruncationDistribution:
    """P(Q = j) proportional to 2^{-j}."""
    j = np.arange(i_min, i_max + 1)
    return _normalized(i_min, i_max, 2.0 ** (-(j - i_min).astype(float)))


def make_gamma_optimal(flavor: str, kappa: float, i_min: int, i_max: int) -> TruncationDistribution:
    """The sampling distribution minimizing the Gamma factor for its flavor.

    Solve: weights rho_solve^i; LogQF: weights rho_logqf^{2i}. At kappa = 1
    the rate vanishes and the distribution degenerates to a point mass at
    i_min (CG converges in one step, deeper samples are pointless).
    """
    _check_flavor(flavor)
    rho = rho_solve(kappa) if flavor == SOLVE else rho_logqf(kappa)
    power = 1.0 if flavor == SOLVE else 2.0
    if rho == 0.0:
        # kappa = 1: one CG step converges, the support collapses to i_min
        return TruncationDistribution(i_min, i_min, np.array([1.0]))
    j = np.arange(i_min, i_max + 1)
    weights = rho ** (power * (j - i_min))
    return _normalized(i_min, i_max, np.maximum(weights, MIN_PMF_MASS))


def sample(dist: TruncationDistribution, rng: np.random.Generator) -> int:
    """Draw Q by inverse-CDF on the stored pmf."""
    u = rng.random()
    cdf = np.cumsum(dist.pmf)
    idx = int(np.searchsorted(cdf, u, side="right"))
    return dist.i_min + min(idx, dist.i_max - dist.i_min)


@dataclass(frozen=True)
class GammaFactor:
    """A Gamma value together with the rate and window that produced it."""
    value: float
    flavor: str
    rho: float
    i_min: int
    i_max: int


def gamma_factor(dist: TruncationDistribution, flavor: str, kappa: float) -> GammaFactor:
    """Gamma = sum_j rho^{e (j-1)} / P(Q = j), e = 2 (solve) or 4 (logqf).

    Uses the 0^0 := 1 convention so that kappa = 1 with i_min = 1 gives
    Gamma = 1 for a point mass.
    """
    _check_flavor(flavor)
    rho = rho_solve(kappa) if flavor == SOLVE else rho_logqf(kappa)
    exponent = 2.0 if flavor == SOLVE else 4.0
    j = dist.support.astype(float)
    if np.any(dist.pmf <= 0.0):
        raise ValueError("gamma factor undefined: pmf has a zero mass")
    terms = rho ** (exponent * (j - 1.0)) / dist.pmf
    return GammaFactor(float(terms.sum()), flavor, rho, dist.i_min, dist.i_max)


def gamma_optimal_value(flavor: str, kappa: float, i_min: int, i_max: int) -> float:
    """Closed-form minimum of the Gamma factor over all sampling distributions."""
    _check_flavor(flavor)
    if flavor == SOLVE:
        rho = rho_solve(kappa)
        t = rho * rho
        shift = rho ** (2 * (i_min - 1))
    else:
        rho = rho_logqf(kappa)
        t = rho ** 4
        shift = rho ** (4 * (i_min - 1))
    width = i_max - i_min + 1
    if t == 0.0:
        # point mass at i_min; only the j = i_min term survives with mass one
        return shift if i_min > 1 else 1.0
    if t == 1.0:
        return float(width * width)
    return float(shift * (t ** (width / 2.0) - 1.0) ** 2 / (np.sqrt(t) - 1.0) ** 2)


def minimize_weighted_sum(t: float, m1: int, m2: int) -> tuple[np.ndarray, float]:
    """Minimize sum_i t^i / p_i over the simplex {p_i > 0, sum p = 1}.

    Returns the optimizer p_i = t^{i/2} / sum_l t^{l/2} and the minimum
    t^{m1} (t^{(m2-m1+1)/2} - 1)^2 / (t^{1/2} - 1)^2, with the t = 1 limit
    (m2 - m1 + 1)^2.
    """
    if t <= 0.0:
        raise ValueError(f"weight base t must be positive, got {t}")
    if not (1 <= m1 <= m2):
        raise ValueError(f"need m2 >= m1 >= 1, got m1={m1}, m2={m2}")
    i = np.arange(m1, m2 + 1)
    width = m2 - m1 + 1
    weights = np.sqrt(t) ** (i - m1)
    pmf = weights / weights.sum()
    if t == 1.0:
        return pmf, float(width * width)
    minimum = t**m1 * (t ** (width / 2.0) - 1.0) ** 2 / (np.sqrt(t) - 1.0) ** 2
    return pmf, float(minimum)


@dataclass(frozen=True)
class DistSpec:
    """Serializable recipe for a truncation distribution.

    ``gamma_optimal`` needs a condition number at resolution time, so the
    recipe records where to get one (a pilot Lanczos bracket or a dense
    eigendecomposition) instead of a pmf.
    """
    kind: str
    i_min: int
    i_max: int
    c: float = 0.5
    kappa_source: str = "pilot"

    def __post_init__(self):
        if self.kind not in DIST_KINDS:
            raise ValueError(f"unknown distribution kind {self.kind!r}, "
                             f"expected one of {DIST_KINDS}")
        if self.kappa_source not in ("pilot", "dense"):
            raise ValueError(f"unknown kappa source {self.kappa_source!r}")

    def make(self, flavor: str = SOLVE, kappa: Optional[float] = None) -> TruncationDistribution:
        if self.kind == "exponential":
            return make_exponential(self.c, self.i_min, self.i_max)
        if self.kind == "geometric":
            return make_geometric(self.i_min, self.i_max)
        if kappa is None:
            raise ValueError("gamma_optimal distribution needs a condition number")
        return make_gamma_optimal(flavor, kappa, self.i_min, self.i_max)
