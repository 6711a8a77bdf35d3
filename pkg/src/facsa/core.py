"""Shared domain types: degree distributions, system configuration, Poisson law
and the counter-based random stream used by every simulator path."""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from numba import njit

__all__ = [
    "Boundary",
    "DegreeDistribution",
    "RandomStream",
    "SystemConfig",
    "Variant",
    "avg_degree",
    "parse_degree_distribution",
    "poisson_pmf",
    "shifted_vn_dists",
    "to_edge_perspective",
]

_SUM_TOL = 1e-9


class DistributionError(ValueError):
    pass


def _poly(coeffs: Mapping[int, float], x):
    out = 0.0 * np.asarray(x, dtype=float)
    for power, c in coeffs.items():
        out = out + c * np.asarray(x, dtype=float) ** power
    return out if np.ndim(out) else float(out)


@dataclass(frozen=True)
class DegreeDistribution:
    """Node-perspective repetition law: ``terms[l]`` is the probability that a
    user sends ``l`` replicas."""

    terms: Mapping[int, float]

    def __post_init__(self):
        terms = {int(k): float(v) for k, v in dict(self.terms).items()}
        if not terms:
            raise DistributionError("empty degree distribution")
        for deg, p in terms.items():
            if deg < 2:
                raise DistributionError(f"degree {deg} < 2 is not allowed")
            if not p > 0:
                raise DistributionError(f"coefficient of degree {deg} must be positive")
        total = sum(terms.values())
        if abs(total - 1.0) > _SUM_TOL:
            raise DistributionError(f"probabilities sum to {total:.12g}, not 1")
        # rescale only real deviations so that parse(format(d)) == d bit for bit
        scale = total if abs(total - 1.0) > 1e-12 else 1.0
        terms = {k: terms[k] / scale for k in sorted(terms)}
        object.__setattr__(self, "terms", terms)

    @property
    def degrees(self) -> list[int]:
        return list(self.terms)

    @property
    def max_degree(self) -> int:
        return max(self.terms)

    @property
    def is_regular(self) -> bool:
        return len(self.terms) == 1

    def __call__(self, x):
        """Evaluate Λ(x)."""
        return _poly(self.terms, x)

    def __str__(self) -> str:
        return format_degree_distribution(self)

    def cdf(self) -> tuple[np.ndarray, np.ndarray]:
        degs = np.array(self.degrees, dtype=np.int64)
        cum = np.cumsum([self.terms[d] for d in self.degrees])
        cum[-1] = 1.0
        return degs, cum


def format_degree_distribution(dist: DegreeDistribution) -> str:
    parts = []
    for deg, p in dist.terms.items():
        parts.append(f"x{deg}" if p == 1.0 else f"{p!r}x{deg}")
    return "+".join(parts)


_TERM = re.compile(
    r"^(?P<coef>(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][-+]?\d+)?)?\s*\*?\s*x\s*\^?\s*(?P<deg>\d+)$"
)


def parse_degree_distribution(text: str) -> DegreeDistribution:
    """Parse ``"0.86x3+0.14x8"``-style polynomials (``x^3`` also accepted).

    >>> parse_degree_distribution("x3").terms
    {3: 1.0}
    """
    if not isinstance(text, str) or not text.strip():
        raise DistributionError(f"cannot parse degree distribution {text!r}")
    terms: dict[int, float] = {}
    for raw in text.replace(" ", "").split("+"):
        m = _TERM.match(raw)
        if m is None:
            raise DistributionError(f"cannot parse term {raw!r} in {text!r}")
        deg = int(m.group("deg"))
        coef = float(m.group("coef")) if m.group("coef") else 1.0
        if deg in terms:
            raise DistributionError(f"duplicate degree {deg} in {text!r}")
        terms[deg] = coef
    return DegreeDistribution(terms)


def avg_degree(dist: DegreeDistribution) -> float:
    """Λ'(1), the mean number of replicas per user."""
    return sum(l * p for l, p in dist.terms.items())


def to_edge_perspective(dist: DegreeDistribution) -> dict[int, float]:
    """λ_l = lΛ_l / Λ'(1), keyed by VN degree ``l`` (λ(x) = Σ λ_l x^(l-1))."""
    mean = avg_degree(dist)
    return {l: l * p / mean for l, p in dist.terms.items()}


def shifted_vn_dists(dist: DegreeDistribution) -> tuple[dict[int, float], dict[int, float]]:
    """Distributions of the non-fixed edges of a first-slot-fixed user.

    Returns ``(node, edge)`` as maps from polynomial exponent to coefficient:
    ``node`` is Σ Λ_l x^(l-1) and ``edge`` is Σ Λ_l(l-1)/ΣΛ_d(d-1) x^(l-2).
    """
    norm = sum(p * (l - 1) for l, p in dist.terms.items())
    if norm <= 0:
        raise DistributionError("shifted distribution undefined for degree-1 users")
    node = {l - 1: p for l, p in dist.terms.items()}
    edge = {l - 2: p * (l - 1) / norm for l, p in dist.terms.items()}
    return node, edge


def poisson_pmf(k: int, mean: float) -> float:
    """Pr(K=k) for K ~ Po(mean), evaluated in log space."""
    if k < 0:
        return 0.0
    if mean == 0:
        return 1.0 if k == 0 else 0.0
    return math.exp(-mean + k * math.log(mean) - math.lgamma(k + 1))


class Variant(str, enum.Enum):
    FS = "fs"
    FA_F = "fa-f"
    FA_U = "fa-u"
    SC = "sc"


class Boundary(str, enum.Enum):
    ON = "on"
    OFF = "off"


def _coerce(enum_cls, value):
    if isinstance(value, enum_cls):
        return value
    if isinstance(value, bool) and enum_cls is Boundary:
        return Boundary.ON if value else Boundary.OFF
    return enum_cls(str(value).lower())


@dataclass(frozen=True)
class SystemConfig:
    variant: Variant
    n: int
    g: float
    dist: DegreeDistribution
    boundary: Boundary = Boundary.OFF
    rx_memory: int | None = None
    max_sic_iters: int | None = None
    delay_max: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "variant", _coerce(Variant, self.variant))
        object.__setattr__(self, "boundary", _coerce(Boundary, self.boundary))
        if isinstance(self.dist, str):
            object.__setattr__(self, "dist", parse_degree_distribution(self.dist))
        if self.rx_memory is None:
            object.__setattr__(self, "rx_memory", 5 * self.n)
        if self.n < 2:
            raise ValueError("frame length n must be >= 2")
        if not self.g >= 0:
            raise ValueError("load g must be >= 0")
        if self.rx_memory < self.n:
            raise ValueError("receiver memory must cover at least one frame")
        if self.max_sic_iters is not None and self.max_sic_iters < 1:
            raise ValueError("max_sic_iters must be >= 1")
        if self.dist.max_degree > self.n:
            raise ValueError("maximum degree exceeds the frame length")
        if self.variant is Variant.SC:
            if not self.dist.is_regular:
                raise ValueError("SC-CSA requires a regular distribution x^l")
            if self.n % self.sc_repetition:
                raise ValueError("SC-CSA requires n divisible by l")

    @property
    def sc_repetition(self) -> int:
        return self.dist.max_degree

    @property
    def span(self) -> int:
        """Largest offset between a join slot and one of its replica slots."""
        if self.variant is Variant.FS:
            return 2 * self.n
        if self.variant is Variant.SC:
            return self.n + self.n // self.sc_repetition
        return self.n

    def replace(self, **changes) -> "SystemConfig":
        from dataclasses import replace

        return replace(self, **changes)


# -- counter-based random stream ------------------------------------------------
# SplitMix64: output k of a stream is mix64(key + k * GAMMA), so a stream is fully
# described by (key, counter) and is bit-identical on every platform.

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_INV53 = 1.0 / 9007199254740992.0


@njit(cache=True)
def _mix64(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def next_u64(state):
    """``state`` is a 2-element uint64 array ``[key, counter]``."""
    state[1] += np.uint64(1)
    return _mix64(state[0] + state[1] * _GAMMA)


@njit(cache=True)
def next_uniform(state):
    return float(next_u64(state) >> np.uint64(11)) * _INV53


@njit(cache=True)
def next_below(state, k):
    return int(next_uniform(state) * k)


@njit(cache=True)
def next_poisson(state, mean):
    if mean <= 0.0:
        return 0
    u = next_uniform(state)
    k = 0
    p = math.exp(-mean)
    acc = p
    while u > acc and p > 0.0:
        k += 1
        p *= mean / k
        acc += p
    return k


@njit(cache=True)
def next_choice(state, values, cum):
    u = next_uniform(state)
    for i in range(cum.shape[0]):
        if u < cum[i]:
            return values[i]
    return values[cum.shape[0] - 1]


def _stream_key(seed: int, stream_id: int) -> np.uint64:
    mask = (1 << 64) - 1
    s = np.uint64(seed & mask)
    k = _mix64(np.uint64((stream_id * 0x2545F4914F6CDD1D + 0x632BE59BD9B4E019) & mask))
    return _mix64(s ^ k)


@dataclass
class RandomStream:
    """Deterministic stream keyed by ``(seed, stream_id)``; fork to get
    independent children for parallel workers."""

    seed: int
    stream_id: int = 0
    state: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.state = np.array([_stream_key(self.seed, self.stream_id), 0], dtype=np.uint64)

    def fork(self, stream_id: int) -> "RandomStream":
        return RandomStream(self.seed, stream_id)

    @property
    def counter(self) -> int:
        return int(self.state[1])

    def u64(self) -> int:
        return int(next_u64(self.state))

    def uniform(self) -> float:
        return next_uniform(self.state)

    def below(self, k: int) -> int:
        return next_below(self.state, k)

    def poisson(self, mean: float) -> int:
        return next_poisson(self.state, float(mean))

    def choice(self, values: np.ndarray, cum: np.ndarray):
        return next_choice(self.state, values, cum)
