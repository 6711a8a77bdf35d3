"""Density evolution for frame-asynchronous CSA over a chain of slot classes.

Both engines run synchronous sweeps over ``L = chain_multiplier * n`` positions.
No-boundary systems get ``n`` extra positions on the left whose slots are never
observed (their check messages are pinned to erasure) while their users keep
being updated, which models a receiver joining an ongoing system.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .core import (
    Boundary,
    DegreeDistribution,
    Variant,
    avg_degree,
    shifted_vn_dists,
    to_edge_perspective,
)

__all__ = [
    "DEChainState",
    "DEConfig",
    "DEResult",
    "ThresholdNotBracketed",
    "ThresholdQuery",
    "cn_mean_fau",
    "cn_means_faf",
    "de_iterate_faf",
    "de_iterate_fau",
    "find_threshold",
    "fs_threshold",
    "plr_profile",
    "run_de",
]


class ThresholdNotBracketed(RuntimeError):
    pass


@dataclass(frozen=True)
class DEConfig:
    n: int = 100
    chain_multiplier: int = 20
    max_iterations: int = 50_000
    convergence_eps: float = 1e-12
    target_plr_eps: float = 1e-8
    # frames excluded from the feasibility test at each edge that touches
    # erased padding (right end always, left end without boundary)
    edge_guard: int | None = None

    def __post_init__(self):
        if self.chain_multiplier < 2:
            raise ValueError("chain_multiplier must be >= 2")
        if self.edge_guard is None:
            object.__setattr__(self, "edge_guard", max(1, min(5, (self.chain_multiplier - 1) // 2)))
        if self.edge_guard < 1 or 2 * self.edge_guard >= self.chain_multiplier:
            raise ValueError("edge_guard must leave an interior to test")
        if not (0 < self.convergence_eps < 1 and 0 < self.target_plr_eps < 1):
            raise ValueError("tolerances must lie in (0, 1)")
        if self.n < 2:
            raise ValueError("n must be >= 2")

    @property
    def length(self) -> int:
        return self.chain_multiplier * self.n


@dataclass(frozen=True)
class ThresholdQuery:
    dist: DegreeDistribution
    variant: Variant
    boundary: Boundary
    de_config: DEConfig = field(default_factory=DEConfig)
    tolerance: float = 5e-4
    g_hi: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(self, "boundary", Boundary(self.boundary))
        if self.variant not in (Variant.FA_F, Variant.FA_U):
            raise ValueError("density evolution covers fa-f and fa-u only")


def _polyval(coeffs: dict[int, float], x: np.ndarray) -> np.ndarray:
    out = np.zeros_like(np.asarray(x, dtype=float))
    for power, c in coeffs.items():
        out += c * x**power
    return out


# -- check-node degree laws ---------------------------------------------------


def cn_means_faf(i: int, g: float, dist: DegreeDistribution, n: int, boundary) -> tuple[float, float]:
    """Poisson means of a class-i slot's degree: users joining in slot i-1
    (first replica) and older users still in their local frames."""
    if Boundary(boundary) is Boundary.ON:
        delta = min(i - 1, n - 1) * g
    else:
        delta = (n - 1) * g
    return g, delta * (avg_degree(dist) - 1) / (n - 1)


def cn_mean_fau(i: int, g: float, dist: DegreeDistribution, n: int, boundary) -> float:
    mu = min(i, n) * g if Boundary(boundary) is Boundary.ON else n * g
    return mu / n * avg_degree(dist)


# -- chain state ----------------------------------------------------------------


@dataclass
class DEChainState:
    """Message arrays over the chain.

    Arrays have ``pre + length`` entries; entry ``k`` is position ``k - pre + 1``.
    For fa-u only ``p`` and ``q`` are used.
    """

    variant: Variant
    n: int
    length: int
    pre: int
    p_ii: np.ndarray
    p_ij: np.ndarray
    q_ii: np.ndarray
    q_ij: np.ndarray
    q_tilde: np.ndarray
    iterations: int = 0

    @classmethod
    def initial(cls, variant, n: int, length: int, boundary) -> "DEChainState":
        pre = 0 if Boundary(boundary) is Boundary.ON else n
        size = pre + length
        ones = lambda: np.ones(size)  # noqa: E731
        return cls(Variant(variant), n, length, pre, ones(), ones(), ones(), ones(), ones())

    # fa-u aliases
    @property
    def p(self) -> np.ndarray:
        return self.p_ii

    @property
    def q(self) -> np.ndarray:
        return self.q_ii

    def copy(self) -> "DEChainState":
        return DEChainState(
            self.variant, self.n, self.length, self.pre,
            self.p_ii.copy(), self.p_ij.copy(), self.q_ii.copy(), self.q_ij.copy(),
            self.q_tilde.copy(), self.iterations,
        )


def _coeff_arrays(coeffs: dict[int, float]) -> tuple[np.ndarray, np.ndarray]:
    """(lowest power, dense coefficients from that power up)."""
    low = min(coeffs)
    dense = np.zeros(max(coeffs) - low + 1)
    for k, c in coeffs.items():
        dense[k - low] = c
    return np.array([low], dtype=np.int64), dense


@njit(cache=True)
def _poly(low, dense, x):
    out = 0.0
    for k in range(dense.shape[0] - 1, -1, -1):
        out = out * x + dense[k]
    for _ in range(low[0]):
        out *= x
    return out


@njit(cache=True)
def _prefix(values):
    c = np.empty(values.shape[0] + 1)
    c[0] = 0.0
    for k in range(values.shape[0]):
        c[k + 1] = c[k] + values[k]
    return c


@njit(cache=True)
def _sweep_faf(p_ii, p_ij, q, qt, g, node_pw, node_c, edge_pw, edge_c, z, n, pre, boundary_on):
    size = q.shape[0]
    cq = _prefix(q)
    change = 0.0
    new_pij = np.empty(size)
    for k in range(size):
        # slots k+1 .. k+n-1, erased beyond the chain
        hi = min(k + n, size)
        outside = k + n - hi
        s = cq[hi] - cq[min(k + 1, hi)] + outside
        qt[k] = s / (n - 1)
        v = _poly(node_pw, node_c, qt[k])
        change = max(change, abs(v - p_ii[k]))
        p_ii[k] = v
        v = q[k] * _poly(edge_pw, edge_c, qt[k])
        change = max(change, abs(v - p_ij[k]))
        new_pij[k] = v
    cp = _prefix(new_pij)
    for k in range(size):
        p_ij[k] = new_pij[k]
        pos = k - pre + 1
        if pos < 1:
            v = 1.0
        else:
            cnt = min(k, n - 1)
            pt = (cp[k] - cp[k - cnt]) / cnt if cnt > 0 else 0.0
            older = min(pos - 1, n - 1) if boundary_on else n - 1
            v = 1.0 - math.exp(-g * p_ii[k] - older * g * z * pt)
        change = max(change, abs(v - q[k]))
        q[k] = v
    return change


@njit(cache=True)
def _sweep_fau(p, q, qt, g, lam_pw, lam_c, mean_deg, n, pre, boundary_on):
    size = q.shape[0]
    cq = _prefix(q)
    change = 0.0
    for k in range(size):
        hi = min(k + n, size)
        s = cq[hi] - cq[k] + (k + n - hi)
        qt[k] = s / n
        v = _poly(lam_pw, lam_c, qt[k])
        change = max(change, abs(v - p[k]))
        p[k] = v
    cp = _prefix(p)
    for k in range(size):
        pos = k - pre + 1
        if pos < 1:
            v = 1.0
        else:
            cnt = min(k + 1, n)
            pt = (cp[k + 1] - cp[k + 1 - cnt]) / cnt
            active = min(pos, n) if boundary_on else n
            v = 1.0 - math.exp(-(active * g / n) * mean_deg * pt)
        change = max(change, abs(v - q[k]))
        q[k] = v
    return change


@njit(cache=True)
def _max_plr(fixed_first, q, qt, pw, c, lo, hi):
    worst = 0.0
    for k in range(lo, hi):
        v = _poly(pw, c, qt[k])
        if fixed_first:
            v *= q[k]
        worst = max(worst, v)
    return worst


@njit(cache=True)
def _run_kernel(fixed_first, p_ii, p_ij, q, qt, g, a_pw, a_c, b_pw, b_c, plr_pw, plr_c,
                scalar, n, pre, boundary_on, max_it, conv_eps, target, lo, hi, check_every):
    """Iterate until the tested window [lo, hi) is resolved, the messages stall
    or the sweep budget runs out. Returns (sweeps, max_plr)."""
    worst = 1.0
    for it in range(max_it):
        if fixed_first:
            change = _sweep_faf(p_ii, p_ij, q, qt, g, a_pw, a_c, b_pw, b_c, scalar, n, pre, boundary_on)
        else:
            change = _sweep_fau(p_ii, q, qt, g, a_pw, a_c, scalar, n, pre, boundary_on)
        if it % check_every == 0 or change < conv_eps or it == max_it - 1:
            worst = _max_plr(fixed_first, q, qt, plr_pw, plr_c, lo, hi)
            if worst < target or change < conv_eps:
                return it + 1, worst
    return max_it, worst


class _Recursion:
    """Coefficient arrays for one (variant, distribution, n) triple."""

    def __init__(self, variant: Variant, dist: DegreeDistribution, n: int):
        self.fixed_first = variant is Variant.FA_F
        if self.fixed_first:
            node, edge = shifted_vn_dists(dist)
            self.a = _coeff_arrays(node)
            self.b = _coeff_arrays(edge)
            self.plr = self.a
            self.scalar = (avg_degree(dist) - 1) / (n - 1)
        else:
            lam = {l - 1: c for l, c in to_edge_perspective(dist).items()}
            self.a = _coeff_arrays(lam)
            self.b = self.a
            self.plr = _coeff_arrays(dist.terms)
            self.scalar = avg_degree(dist)

    def run(self, state: DEChainState, g: float, boundary_on: bool, max_it: int, conv_eps: float,
            target: float, lo: int, hi: int, check_every: int = 8) -> tuple[int, float]:
        sweeps, worst = _run_kernel(
            self.fixed_first, state.p_ii, state.p_ij, state.q_ii, state.q_tilde, float(g),
            *self.a, *self.b, *self.plr, self.scalar, state.n, state.pre, boundary_on,
            max_it, conv_eps, target, state.pre + lo, state.pre + hi, check_every,
        )
        state.iterations += sweeps
        return sweeps, worst


def _sweep(state: DEChainState, g: float, dist: DegreeDistribution, boundary) -> float:
    rec = _Recursion(state.variant, dist, state.n)
    on = Boundary(boundary) is Boundary.ON
    if rec.fixed_first:
        change = _sweep_faf(state.p_ii, state.p_ij, state.q_ii, state.q_tilde, float(g),
                            *rec.a, *rec.b, rec.scalar, state.n, state.pre, on)
        state.q_ij[:] = state.q_ii
    else:
        change = _sweep_fau(state.p_ii, state.q_ii, state.q_tilde, float(g),
                            *rec.a, rec.scalar, state.n, state.pre, on)
    state.iterations += 1
    return float(change)


def de_iterate_faf(state: DEChainState, g: float, dist: DegreeDistribution, boundary) -> float:
    """One Jacobi sweep of the first-slot-fixed recursion, in place; returns
    the largest absolute message change.

    The check messages towards the fixed edge and towards older users share one
    closed form under Poisson arrivals, so ``q_ij`` is kept as a copy of ``q_ii``.
    """
    if state.variant is not Variant.FA_F:
        raise ValueError("state was not built for fa-f")
    return _sweep(state, g, dist, boundary)


def de_iterate_fau(state: DEChainState, g: float, dist: DegreeDistribution, boundary) -> float:
    """One Jacobi sweep of the uniform-placement recursion, in place."""
    if state.variant is not Variant.FA_U:
        raise ValueError("state was not built for fa-u")
    return _sweep(state, g, dist, boundary)


def plr_profile(state: DEChainState, dist: DegreeDistribution, full: bool = False) -> np.ndarray:
    """Per-position PLR for positions 1..L-n (1..L with ``full``)."""
    qt = state.q_tilde[state.pre:]
    if state.variant is Variant.FA_F:
        node, _ = shifted_vn_dists(dist)
        # Λ(q̃) q_ii / q̃ without the 0/0 at resolved positions
        plr = state.q_ii[state.pre:] * _polyval(node, qt)
    else:
        plr = dist(qt)
    plr = np.asarray(plr, dtype=float)
    return plr if full else plr[: state.length - state.n]


def _tested_window(cfg: DEConfig, boundary) -> tuple[int, int]:
    guard = cfg.edge_guard * cfg.n
    lo = 0 if Boundary(boundary) is Boundary.ON else guard
    return lo, cfg.length - guard


@dataclass
class DEResult:
    feasible: bool
    iterations: int
    max_plr: float
    state: DEChainState


def run_de(g: float, dist: DegreeDistribution, variant, boundary, cfg: DEConfig = DEConfig(),
           snapshot_every: int = 0) -> tuple[DEResult, list[np.ndarray]]:
    """Run the chain recursion at load ``g`` from all-erased messages.

    With ``snapshot_every`` the PLR profile is recorded every that many sweeps
    (the second element of the returned pair)."""
    variant = Variant(variant)
    state = DEChainState.initial(variant, cfg.n, cfg.length, boundary)
    rec = _Recursion(variant, dist, cfg.n)
    on = Boundary(boundary) is Boundary.ON
    lo, hi = _tested_window(cfg, boundary)
    snapshots: list[np.ndarray] = []
    budget = cfg.max_iterations
    chunk = snapshot_every or budget
    worst = 1.0
    while budget > 0:
        requested = min(chunk, budget)
        sweeps, worst = rec.run(state, g, on, requested, cfg.convergence_eps,
                                cfg.target_plr_eps, lo, hi)
        budget -= sweeps
        if snapshot_every:
            snapshots.append(plr_profile(state, dist))
        if worst < cfg.target_plr_eps or sweeps < requested:
            break
    return DEResult(worst < cfg.target_plr_eps, state.iterations, worst, state), snapshots


def find_threshold(query: ThresholdQuery) -> tuple[float, int]:
    """Bisection for the largest feasible load. Returns ``(g_star, sweeps)``."""
    cfg = query.de_config
    total = 0
    hi_res, _ = run_de(query.g_hi, query.dist, query.variant, query.boundary, cfg)
    total += hi_res.iterations
    if hi_res.feasible:
        raise ThresholdNotBracketed(f"load {query.g_hi} is already feasible; raise g_hi")
    lo, hi = 0.0, query.g_hi
    while hi - lo >= query.tolerance:
        mid = 0.5 * (lo + hi)
        res, _ = run_de(mid, query.dist, query.variant, query.boundary, cfg)
        total += res.iterations
        if res.feasible:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi), total


# -- frame-synchronous reference -----------------------------------------------


def scalar_fixed_point(g: float, dist: DegreeDistribution, max_iterations: int = 100_000,
                       eps: float = 1e-14) -> tuple[float, float]:
    """Iterate p = λ(q), q = 1 - exp(-gΛ'(1)p) from p = q = 1; returns (p, q)."""
    lam = {l - 1: c for l, c in to_edge_perspective(dist).items()}
    mean_deg = avg_degree(dist)
    p = q = 1.0
    for _ in range(max_iterations):
        p_new = sum(c * q**k for k, c in lam.items())
        q_new = 1.0 - math.exp(-g * mean_deg * p_new)
        if abs(p_new - p) < eps and abs(q_new - q) < eps:
            return p_new, q_new
        p, q = p_new, q_new
    return p, q


def fs_threshold(dist: DegreeDistribution, tolerance: float = 5e-4, g_hi: float = 1.0,
                 target_plr_eps: float = 1e-8) -> float:
    """Frame-synchronous threshold from the uncoupled scalar recursion."""
    def feasible(g):
        _, q = scalar_fixed_point(g, dist)
        return dist(q) < target_plr_eps

    if feasible(g_hi):
        raise ThresholdNotBracketed(f"load {g_hi} is already feasible; raise g_hi")
    lo, hi = 0.0, g_hi
    while hi - lo >= tolerance:
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if feasible(mid) else (lo, mid)
    return 0.5 * (lo + hi)
