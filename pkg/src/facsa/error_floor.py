"""Analytic error-floor prediction from minimal stopping sets.

For a stopping set S with ``nu`` users, ``mu`` slots and degree profile
``v``, the probability that a given user is caught in a copy of S is

    phi(S) * nu * c(S) * C(n, mu) * prod_l Lambda_l^v_l / v_l! * C(n, l)^-v_l

where phi(S) averages the number of available co-users over the Poisson law.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import DegreeDistribution, Variant, parse_degree_distribution
from .stopping_sets import Catalog, StoppingSetRecord, enumerate_catalog

__all__ = [
    "EFQuery",
    "a_factor",
    "b_factor",
    "d_factor",
    "distance_pmf",
    "ef_contributions",
    "ef_plr",
    "phi_factor",
    "selection_probability",
    "selection_sum",
    "selection_sum_closed",
    "sc_ef_plr",
]

_SERIES_LIMIT = 50.0


def _log_comb(n: int, k: int) -> float:
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


def _supported(record: StoppingSetRecord, dist: DegreeDistribution) -> bool:
    return all(l in dist.terms for l in record.profile)


def a_factor(record: StoppingSetRecord, m: int, dist: DegreeDistribution) -> float:
    """Expected number of ways to pick the users of ``record`` (with its degree
    profile) out of ``m`` users drawn from ``dist``."""
    nu = record.nu
    if m < nu or not _supported(record, dist):
        return 0.0
    log_a = math.lgamma(m + 1) - math.lgamma(m - nu + 1)
    for l, v in record.profile.items():
        log_a += v * math.log(dist.terms[l]) - math.lgamma(v + 1)
    return math.exp(log_a)


def b_factor(record: StoppingSetRecord, variant, n: int) -> float:
    """Number of slot sets that can host the stopping set around the user."""
    variant = Variant(variant)
    if variant is Variant.FA_F:
        return math.comb(n - 1, record.mu - 1)
    return math.comb(n, record.mu)


def d_factor(record: StoppingSetRecord, variant, n: int) -> float:
    """Number of edge placements of the stopping-set users in their frames."""
    variant = Variant(variant)
    out = 1
    for l, v in record.profile.items():
        ways = n * math.comb(n - 1, l - 1) if variant is Variant.FA_F else math.comb(n, l)
        out *= ways**v
    return out / n if variant is Variant.FA_F else out


def selection_probability(record, variant, n: int, m: int, dist) -> float:
    """Probability that a given user belongs to a copy of ``record`` when
    exactly ``m`` users (itself included) are present."""
    if m <= 0:
        return 0.0
    a = a_factor(record, m, dist)
    if a == 0.0:
        return 0.0
    return a * b_factor(record, variant, n) * record.c / d_factor(record, variant, n) * record.nu / m


def selection_sum_closed(nu: int, x: float) -> float:
    """Finite alternating sum replacing the Poisson average of 1/(m (m-nu)!).

    Exact only up to an additive (nu-1)! e^-x term."""
    terms = [(-1) ** (nu - 1 + k) * math.factorial(nu - 1) / math.factorial(k) * x**k for k in range(nu)]
    return math.fsum(terms)


def selection_sum(nu: int, x: float) -> float:
    """sum_{m >= nu} e^-x x^m / (m (m - nu)!), evaluated without cancellation."""
    if nu < 1:
        raise ValueError("nu must be >= 1")
    if x <= 0:
        return 0.0
    if x >= _SERIES_LIMIT:
        return selection_sum_closed(nu, x) - (-1) ** (nu - 1) * math.factorial(nu - 1) * math.exp(-x)
    # e^-x x^nu sum_j x^j / ((j + nu) j!)
    term = 1.0
    total = 1.0 / nu
    j = 0
    while True:
        j += 1
        term *= x / j
        inc = term / (j + nu)
        total += inc
        if inc < 1e-17 * total:
            break
    return math.exp(-x + nu * math.log(x)) * total


def distance_pmf(q: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Law of the span between the first and last slot of a degree-``q``
    user placed uniformly in ``n`` slots: returns ``(d, Pr(D=d))``."""
    if not 2 <= q <= n:
        raise ValueError(f"need 2 <= q <= n, got q={q}, n={n}")
    d = np.arange(q - 1, n, dtype=np.int64)
    log_norm = _log_comb(n, q)
    pmf = np.array([(n - k) * math.exp(_log_comb(k - 1, q - 2) - log_norm) for k in d])
    return d, pmf


def phi_factor(record: StoppingSetRecord, variant, n: int, g: float, exact: bool = True) -> float:
    variant = Variant(variant)
    sel = selection_sum if exact else selection_sum_closed
    nu = record.nu
    if variant is Variant.FS:
        return sel(nu, n * g)
    if variant is Variant.FA_F:
        scale = record.mu * math.prod(l ** (-v) for l, v in record.profile.items())
        return scale * sel(nu, n * g)
    if variant is Variant.FA_U:
        d, pmf = distance_pmf(record.q, n)
        return math.fsum(p * sel(nu, (n - k) * g) for k, p in zip(d.tolist(), pmf.tolist()))
    raise ValueError(f"no stopping-set error floor for variant {variant.value}")


@dataclass(frozen=True)
class EFQuery:
    variant: Variant
    n: int
    g: float
    dist: DegreeDistribution
    catalog: Catalog | None = None
    exact: bool = True

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if isinstance(self.dist, str):
            object.__setattr__(self, "dist", parse_degree_distribution(self.dist))
        if not self.g > 0:
            raise ValueError("g must be > 0")


def _structural_weight(record: StoppingSetRecord, n: int, dist: DegreeDistribution) -> float:
    log_w = math.log(record.nu * record.c) + _log_comb(n, record.mu)
    for l, v in record.profile.items():
        log_w += v * math.log(dist.terms[l]) - math.lgamma(v + 1) - v * _log_comb(n, l)
    return math.exp(log_w)


def ef_contributions(query: EFQuery) -> list[tuple[StoppingSetRecord, float]]:
    """Per-record terms of the error-floor sum (unsupported records omitted)."""
    if query.variant is Variant.SC:
        raise ValueError("use sc_ef_plr for SC")
    catalog = query.catalog if query.catalog is not None else enumerate_catalog(4)
    if query.n <= max(r.mu for r in catalog):
        raise ValueError("frame length must exceed the largest stopping-set span")
    if query.n < query.dist.max_degree:
        raise ValueError("frame length below the maximum degree")
    out = []
    for rec in catalog:
        if not _supported(rec, query.dist):
            continue
        phi = phi_factor(rec, query.variant, query.n, query.g, exact=query.exact)
        out.append((rec, phi * _structural_weight(rec, query.n, query.dist)))
    return out


def ef_plr(query: EFQuery) -> float:
    return math.fsum(v for _, v in ef_contributions(query))


def sc_ef_plr(l: int, n: int, g: float) -> float:
    """Dominant-event floor of SC-CSA: two users sharing all l slots."""
    if l < 2 or n < l or n % l:
        raise ValueError("SC needs l >= 2 and n divisible by l")
    if g < 0:
        raise ValueError("g must be >= 0")
    return (l / n) ** l * g * n / l
