"""Slot-level Monte Carlo of coded slotted ALOHA with a sliding-window SIC
receiver.

Two engines share the random stream and the replica placement routine, so they
consume identical draws:

* ``reference``: plain Python objects (``UserRecord``, ``SlotState``,
  ``ReceiverWindow``), readable and slow;
* ``numba``: a ring-buffer kernel used for long runs.

Per slot ``t`` the order is: evict slot ``t - N_RX``, receive slot ``t``, run
SIC, then draw the users joining in slot ``t`` (their replicas lie in later
slots).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .core import (
    Boundary,
    RandomStream,
    SystemConfig,
    Variant,
    next_below,
    next_choice,
    next_poisson,
)

__all__ = [
    "ReceiverWindow",
    "SimStats",
    "SlotState",
    "StatsSummary",
    "UserRecord",
    "advance_and_decode",
    "arrivals_for_slot",
    "batch_interval",
    "collect_stats",
    "init_population",
    "place_replicas",
    "run_simulation",
    "slot_degree_sample",
    "wilson_interval",
]

_CODES = {Variant.FS: 0, Variant.FA_F: 1, Variant.FA_U: 2, Variant.SC: 3}
Z95 = 1.959963984540054


def default_warmup(config: SystemConfig) -> int:
    return 5 * config.n


def tail_exclusion(config: SystemConfig) -> int:
    """Users joining this close to the end may still be undecided."""
    return config.span + config.rx_memory


def _prepop_range(config: SystemConfig) -> range:
    # earliest join slot whose replicas can reach slot 1, for every variant
    return range(1 - config.n, 1)


# -- placement ------------------------------------------------------------------


@njit(cache=True)
def _has(buf, k, v):
    for i in range(k):
        if buf[i] == v:
            return True
    return False


@njit(cache=True)
def _place(state, code, n, degree, join, out):
    """Write ``degree`` sorted replica slots of a user joining in ``join``."""
    k = 0
    if code == 0:  # FS: next global frame
        base = ((join - 1) // n + 1) * n + 1
        while k < degree:
            s = base + next_below(state, n)
            if not _has(out, k, s):
                out[k] = s
                k += 1
    elif code == 1:  # FA-F: first replica right after joining
        out[0] = join + 1
        k = 1
        while k < degree:
            s = join + 2 + next_below(state, n - 1)
            if not _has(out, k, s):
                out[k] = s
                k += 1
    elif code == 2:  # FA-U
        while k < degree:
            s = join + 1 + next_below(state, n)
            if not _has(out, k, s):
                out[k] = s
                k += 1
    else:  # SC: one slot in each of the next `degree` short frames
        w = n // degree
        f = (join - 1) // w
        for k in range(degree):
            out[k] = (f + 1 + k) * w + 1 + next_below(state, w)
    for i in range(1, degree):
        v = out[i]
        j = i - 1
        while j >= 0 and out[j] > v:
            out[j + 1] = out[j]
            j -= 1
        out[j + 1] = v


def place_replicas(user_degree: int, join_slot: int, config: SystemConfig, rng: RandomStream) -> list[int]:
    if user_degree < 1:
        raise ValueError("degree must be positive")
    if config.variant is Variant.FA_F and user_degree > config.n:
        raise ValueError("degree exceeds the local frame")
    if config.variant in (Variant.FS, Variant.FA_U) and user_degree > config.n:
        raise ValueError("degree exceeds the frame")
    if config.variant is Variant.SC and config.n % user_degree:
        raise ValueError("SC needs n divisible by the degree")
    out = np.zeros(user_degree, dtype=np.int64)
    _place(rng.state, _CODES[config.variant], config.n, user_degree, join_slot, out)
    return out.tolist()


# -- reference engine -------------------------------------------------------------


@dataclass
class UserRecord:
    id: int
    join_slot: int
    degree: int
    replica_slots: list[int]
    decoded_slot: int | None = None
    counted: bool = False

    @property
    def last_slot(self) -> int:
        return self.replica_slots[-1]


@dataclass
class SlotState:
    slot_index: int
    residual_replicas: set = field(default_factory=set)

    @property
    def degree(self) -> int:
        return len(self.residual_replicas)


def _draw_users(config: SystemConfig, slot: int, rng: RandomStream, first_id: int) -> list[UserRecord]:
    degs, cum = config.dist.cdf()
    count = rng.poisson(config.g)
    users = []
    for k in range(count):
        degree = int(rng.choice(degs, cum))
        users.append(UserRecord(first_id + k, slot, degree, place_replicas(degree, slot, config, rng)))
    return users


def init_population(config: SystemConfig, rng: RandomStream) -> list[UserRecord]:
    """Users already active when observation starts (empty with a boundary)."""
    if config.boundary is Boundary.ON:
        return []
    users: list[UserRecord] = []
    for j in _prepop_range(config):
        users.extend(_draw_users(config, j, rng, len(users)))
    return users


def arrivals_for_slot(config: SystemConfig, slot: int, rng: RandomStream, first_id: int = 0) -> list[UserRecord]:
    if slot < 1:
        raise ValueError("arrival slots start at 1")
    return _draw_users(config, slot, rng, first_id)


class ReceiverWindow:
    """The most recent ``rx_memory`` received slots plus the SIC state."""

    def __init__(self, config: SystemConfig):
        self.config = config
        self.current_slot = 0
        self.slots: dict[int, SlotState] = {}
        self.users: dict[int, UserRecord] = {}
        self.pending: set[int] = set()
        self.evicted: list[int] = []

    def register(self, user: UserRecord) -> None:
        self.users[user.id] = user

    def advance_and_decode(self, new_slot: SlotState, order_rng=None) -> list[int]:
        t = new_slot.slot_index
        if t != self.current_slot + 1:
            raise ValueError(f"expected slot {self.current_slot + 1}, got {t}")
        self.current_slot = t
        lo = t - self.config.rx_memory + 1
        self.evicted = [s for s in self.slots if s < lo]
        for s in self.evicted:
            del self.slots[s]
        self.pending = {s for s in self.pending if s >= lo}

        new_slot.residual_replicas = {
            u for u in new_slot.residual_replicas if self.users[u].decoded_slot is None
        }
        self.slots[t] = new_slot
        if new_slot.degree == 1:
            self.pending.add(t)

        decoded: list[int] = []
        limit = self.config.max_sic_iters
        rounds = 0
        while self.pending and (limit is None or rounds < limit):
            cands = sorted(self.pending)
            self.pending = set()
            if order_rng is not None:
                order_rng.shuffle(cands)
            batch = []
            for s in cands:
                st = self.slots.get(s)
                if st is None or st.degree != 1:
                    continue
                uid = next(iter(st.residual_replicas))
                user = self.users[uid]
                if user.decoded_slot is None:
                    user.decoded_slot = t
                    batch.append(uid)
            for uid in batch:
                for s in self.users[uid].replica_slots:
                    st = self.slots.get(s)
                    if st is not None and uid in st.residual_replicas:
                        st.residual_replicas.discard(uid)
                        if st.degree == 1:
                            self.pending.add(s)
            decoded.extend(batch)
            rounds += 1
        return decoded


def advance_and_decode(window: ReceiverWindow, new_slot: SlotState, config: SystemConfig | None = None) -> list[int]:
    return window.advance_and_decode(new_slot)


# -- statistics --------------------------------------------------------------------


@dataclass
class SimStats:
    users_observed: int
    users_resolved: int
    delay_histogram: np.ndarray
    warmup_slots: int = 0
    slots: int = 0

    @property
    def users_lost(self) -> int:
        return self.users_observed - self.users_resolved

    def merge(self, other: "SimStats") -> "SimStats":
        a, b = self.delay_histogram, other.delay_histogram
        size = max(a.size, b.size)
        hist = np.zeros(size, dtype=np.int64)
        hist[: a.size] += a
        hist[: b.size] += b
        return SimStats(
            self.users_observed + other.users_observed,
            self.users_resolved + other.users_resolved,
            hist,
            self.warmup_slots + other.warmup_slots,
            self.slots + other.slots,
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, SimStats):
            return NotImplemented
        a = np.trim_zeros(self.delay_histogram, "b")
        b = np.trim_zeros(other.delay_histogram, "b")
        return (
            self.users_observed == other.users_observed
            and self.users_resolved == other.users_resolved
            and np.array_equal(a, b)
            and self.warmup_slots == other.warmup_slots
            and self.slots == other.slots
        )


def wilson_interval(losses: int, total: int, z: float = Z95) -> tuple[float, float]:
    if total <= 0:
        raise ValueError("no observations")
    p = losses / total
    denom = 1 + z * z / total
    centre = (p + z * z / (2 * total)) / denom
    half = z * math.sqrt(p * (1 - p) / total + z * z / (4 * total * total)) / denom
    low = 0.0 if losses == 0 else max(0.0, centre - half)
    high = 1.0 if losses == total else min(1.0, centre + half)
    return low, high


def batch_interval(losses, observed, z: float = Z95) -> tuple[float, float, float]:
    """PLR and its interval from independent trials (ratio estimator).

    Losses arrive in bursts near the waterfall, so the binomial interval is
    too narrow there; the spread between trials captures the clustering.
    Returns ``(plr, low, high)``.
    """
    losses = np.asarray(losses, dtype=float)
    observed = np.asarray(observed, dtype=float)
    k = losses.size
    if k < 2 or observed.size != k or observed.sum() <= 0:
        raise ValueError("need at least two trials with observations")
    plr = losses.sum() / observed.sum()
    resid = losses - plr * observed
    se = math.sqrt((resid**2).sum() / (k * (k - 1))) / observed.mean()
    return plr, max(0.0, plr - z * se), min(1.0, plr + z * se)


@dataclass(frozen=True)
class StatsSummary:
    users_observed: int
    users_lost: int
    plr: float
    plr_ci_low: float
    plr_ci_high: float
    mean_delay: float
    mean_delay_ci: tuple[float, float]
    p90_delay: float
    min_delay: float
    max_delay: float
    delay_plr: float | None = None


def collect_stats(stats: SimStats, delay_max: int | None = None) -> StatsSummary:
    n_obs = stats.users_observed
    if n_obs <= 0:
        raise ValueError("no observed users")
    hist = stats.delay_histogram
    lost = n_obs - stats.users_resolved
    lo, hi = wilson_interval(lost, n_obs)
    delay_plr = None
    if delay_max is not None:
        late = int(hist[delay_max + 1 :].sum()) if delay_max + 1 < hist.size else 0
        delay_plr = (lost + late) / n_obs
    resolved = int(hist.sum())
    if resolved:
        d = np.arange(hist.size, dtype=float)
        mean = float((d * hist).sum() / resolved)
        var = float(((d - mean) ** 2 * hist).sum() / max(resolved - 1, 1))
        half = Z95 * math.sqrt(var / resolved)
        cum = np.cumsum(hist)
        p90 = float(np.searchsorted(cum, 0.9 * resolved))
        nz = np.flatnonzero(hist)
        dmin, dmax = float(nz[0]), float(nz[-1])
    else:
        mean = p90 = dmin = dmax = math.nan
        half = math.nan
    return StatsSummary(n_obs, lost, lost / n_obs, lo, hi, mean, (mean - half, mean + half), p90, dmin, dmax, delay_plr)


# -- reference driver ---------------------------------------------------------------


def _run_reference(config: SystemConfig, total_slots: int, warmup: int, rng: RandomStream, order_rng=None) -> SimStats:
    rx = config.rx_memory
    last_counted = total_slots - tail_exclusion(config)
    hist = np.zeros(config.span + rx + 1, dtype=np.int64)
    window = ReceiverWindow(config)
    schedule: dict[int, set] = {}
    by_last: dict[int, list] = {}
    observed = resolved = 0
    next_id = 0

    def enroll(users):
        nonlocal observed, next_id
        for u in users:
            u.counted = warmup < u.join_slot <= last_counted
            observed += u.counted
            next_id = max(next_id, u.id + 1)
            if u.last_slot < 1:
                continue
            window.register(u)
            for s in u.replica_slots:
                if s >= 1:
                    schedule.setdefault(s, set()).add(u.id)
            by_last.setdefault(u.last_slot, []).append(u.id)

    enroll(init_population(config, rng))
    next_id = max(next_id, 0)
    for t in range(1, total_slots + 1):
        decoded = window.advance_and_decode(SlotState(t, schedule.pop(t, set())), order_rng)
        for uid in decoded:
            u = window.users[uid]
            if u.counted:
                resolved += 1
                hist[t - u.join_slot] += 1
        for s in window.evicted:
            for uid in by_last.pop(s, []):
                window.users.pop(uid)
        enroll(arrivals_for_slot(config, t, rng, next_id))
    return SimStats(observed, resolved, hist, warmup, total_slots)


# -- numba engine ----------------------------------------------------------------


@njit(cache=True)
def _kernel(state, code, n, g, degs, cum, rx, max_rounds, total, warmup, last_counted, prepop, span, ucap, hist, out):
    scap = 1
    while scap < rx + span + 2:
        scap *= 2
    smask = scap - 1
    umask = ucap - 1
    maxdeg = 0
    for d in degs:
        maxdeg = max(maxdeg, d)

    cnt = np.zeros(scap, np.int64)
    xr = np.zeros(scap, np.int64)
    head = np.full(scap, -1, np.int64)
    flag = np.zeros(scap, np.bool_)
    cand = np.empty(scap, np.int64)
    work = np.empty(scap, np.int64)
    u_join = np.zeros(ucap, np.int64)
    u_deg = np.zeros(ucap, np.int64)
    u_slots = np.zeros((ucap, maxdeg), np.int64)
    u_dec = np.full(ucap, -1, np.int64)
    u_next = np.full(ucap, -1, np.int64)
    u_alive = np.zeros(ucap, np.bool_)
    u_counted = np.zeros(ucap, np.bool_)
    batch = np.empty(ucap, np.int64)
    buf = np.zeros(maxdeg, np.int64)
    ncand = 0
    uid = 0
    observed = 0
    resolved = 0

    first = 1 - n if prepop else 1
    for t in range(first, total + 1):
        if t >= 1:
            lo = t - rx + 1
            e = t - rx
            if e >= 1:
                r = e & smask
                v = head[r]
                while v >= 0:
                    vr = v & umask
                    u_alive[vr] = False
                    v = u_next[vr]
                head[r] = -1
                cnt[r] = 0
                xr[r] = 0
            r = t & smask
            if cnt[r] == 1 and not flag[r]:
                flag[r] = True
                cand[ncand] = t
                ncand += 1
            rounds = 0
            while ncand > 0 and (max_rounds < 0 or rounds < max_rounds):
                m = ncand
                for i in range(m):
                    work[i] = cand[i]
                    flag[cand[i] & smask] = False
                ncand = 0
                nb = 0
                for i in range(m):
                    s = work[i]
                    if s < lo:
                        continue
                    r = s & smask
                    if cnt[r] == 1:
                        v = xr[r]
                        vr = v & umask
                        if u_dec[vr] < 0:
                            u_dec[vr] = t
                            batch[nb] = v
                            nb += 1
                for i in range(nb):
                    v = batch[i]
                    vr = v & umask
                    for k in range(u_deg[vr]):
                        s = u_slots[vr, k]
                        if s < lo or s < 1:
                            continue
                        r = s & smask
                        cnt[r] -= 1
                        xr[r] ^= v
                        if s <= t and cnt[r] == 1 and not flag[r]:
                            flag[r] = True
                            cand[ncand] = s
                            ncand += 1
                    if u_counted[vr]:
                        resolved += 1
                        hist[t - u_join[vr]] += 1
                rounds += 1

        # users joining in slot t
        k_new = next_poisson(state, g)
        for _ in range(k_new):
            d = next_choice(state, degs, cum)
            _place(state, code, n, d, t, buf)
            v = uid
            uid += 1
            counted = t > warmup and t <= last_counted
            if counted:
                observed += 1
            last = buf[d - 1]
            if last < 1:
                continue
            vr = v & umask
            if u_alive[vr]:
                out[0] = -1
                return
            u_alive[vr] = True
            u_join[vr] = t
            u_deg[vr] = d
            u_dec[vr] = -1
            u_counted[vr] = counted
            for k in range(d):
                s = buf[k]
                u_slots[vr, k] = s
                if s >= 1:
                    r = s & smask
                    cnt[r] += 1
                    xr[r] ^= v
            r = last & smask
            u_next[vr] = head[r]
            head[r] = v
    out[0] = observed
    out[1] = resolved


def _run_numba(config: SystemConfig, total_slots: int, warmup: int, rng: RandomStream) -> SimStats:
    degs, cum = config.dist.cdf()
    span = config.span
    rx = config.rx_memory
    mean_alive = config.g * (span + rx + 1)
    ucap = 1
    while ucap < 2 * (mean_alive + 12 * math.sqrt(mean_alive + 1)) + 64:
        ucap *= 2
    start = rng.state.copy()
    while True:
        rng.state[:] = start
        hist = np.zeros(span + rx + 1, dtype=np.int64)
        out = np.zeros(2, dtype=np.int64)
        _kernel(
            rng.state,
            _CODES[config.variant],
            config.n,
            float(config.g),
            degs,
            cum,
            rx,
            -1 if config.max_sic_iters is None else config.max_sic_iters,
            total_slots,
            warmup,
            total_slots - tail_exclusion(config),
            config.boundary is Boundary.OFF,
            span,
            ucap,
            hist,
            out,
        )
        if out[0] >= 0:
            return SimStats(int(out[0]), int(out[1]), hist, warmup, total_slots)
        ucap *= 2


def run_simulation(
    config: SystemConfig,
    total_slots: int,
    warmup_slots: int | None = None,
    rng: RandomStream | None = None,
    engine: str = "numba",
) -> SimStats:
    """Simulate ``total_slots`` slots and tally users joining after the
    warmup and early enough to be fully decided."""
    warmup = default_warmup(config) if warmup_slots is None else int(warmup_slots)
    total_slots = int(total_slots)
    if not total_slots > warmup >= 0:
        raise ValueError("need total_slots > warmup_slots >= 0")
    rng = RandomStream(0) if rng is None else rng
    if engine == "numba":
        return _run_numba(config, total_slots, warmup, rng)
    if engine == "reference":
        return _run_reference(config, total_slots, warmup, rng)
    raise ValueError(f"unknown engine {engine!r}")


# -- fresh slot degrees ----------------------------------------------------------------


@njit(cache=True)
def _degree_kernel(state, code, n, g, degs, cum, total, first_cnt, other_cnt):
    maxdeg = 0
    for d in degs:
        maxdeg = max(maxdeg, d)
    buf = np.zeros(maxdeg, np.int64)
    for t in range(1 - n, total + 1):
        k_new = next_poisson(state, g)
        for _ in range(k_new):
            d = next_choice(state, degs, cum)
            _place(state, code, n, d, t, buf)
            for k in range(d):
                s = buf[k]
                if 1 <= s <= total:
                    if code == 1 and k == 0:
                        first_cnt[s - 1] += 1
                    else:
                        other_cnt[s - 1] += 1


def slot_degree_sample(config: SystemConfig, slots: int, rng: RandomStream) -> tuple[np.ndarray, np.ndarray]:
    """Pre-SIC slot degrees of a steady-state system over ``slots`` slots.

    Returns ``(first, other)``: for FA-F, ``first`` counts first replicas of
    users that joined the slot before; for other variants it is all zero.
    """
    degs, cum = config.dist.cdf()
    first = np.zeros(slots, dtype=np.int64)
    other = np.zeros(slots, dtype=np.int64)
    _degree_kernel(rng.state, _CODES[config.variant], config.n, float(config.g), degs, cum, slots, first, other)
    return first, other
