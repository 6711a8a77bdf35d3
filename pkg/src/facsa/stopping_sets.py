"""Enumeration of small minimal stopping sets.

A stopping set is stored as a biadjacency matrix: one row per user (VN), one
column per slot (CN).  Rows are kept as column bitmasks internally.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "Catalog",
    "StoppingSetRecord",
    "canonical_form",
    "count_configurations",
    "enumerate_catalog",
    "format_catalog",
    "is_minimal_stopping_set",
    "largest_stopping_set",
    "read_catalog",
    "write_catalog",
]

MAX_CNS = 5


def _popcount(x: int) -> int:
    return bin(x).count("1")


def _column_degrees(rows, mu: int) -> list[int]:
    return [sum((r >> j) & 1 for r in rows) for j in range(mu)]


def largest_stopping_set(rows, mu: int) -> list[int]:
    """Indices of the rows that survive peeling (empty when the decoder
    resolves every user)."""
    alive = set(range(len(rows)))
    changed = True
    while changed:
        changed = False
        deg = _column_degrees([rows[i] for i in alive], mu)
        for i in list(alive):
            if any(deg[j] == 1 and (rows[i] >> j) & 1 for j in range(mu)):
                alive.discard(i)
                changed = True
                break
    return sorted(alive)


def _is_connected(rows, mu: int) -> bool:
    if not rows:
        return False
    seen_rows = {0}
    cols = rows[0]
    grew = True
    while grew:
        grew = False
        for i, r in enumerate(rows):
            if i not in seen_rows and r & cols:
                seen_rows.add(i)
                cols |= r
                grew = True
    return len(seen_rows) == len(rows)


def is_minimal_stopping_set(rows, mu: int) -> bool:
    """Connected, every one of the ``mu`` columns hit at least twice, and no
    proper non-empty subset of rows is itself a stopping set."""
    rows = list(rows)
    if len(rows) < 2 or not _is_connected(rows, mu):
        return False
    if any(d < 2 for d in _column_degrees(rows, mu)):
        return False
    for size in range(1, len(rows)):
        for sub in itertools.combinations(rows, size):
            if all(d != 1 for d in _column_degrees(sub, mu)):
                return False
    return True


def _permute(row: int, perm) -> int:
    out = 0
    for j, target in enumerate(perm):
        if (row >> j) & 1:
            out |= 1 << target
    return out


def _labelings(rows, mu: int) -> set[tuple[int, ...]]:
    """All distinct row multisets obtained by relabelling the columns."""
    return {tuple(sorted(_permute(r, perm) for r in rows)) for perm in itertools.permutations(range(mu))}


def canonical_form(rows, mu: int) -> tuple[int, ...]:
    return min(_labelings(rows, mu))


@dataclass(frozen=True)
class StoppingSetRecord:
    """One minimal stopping set.

    ``profile[l]`` is the number of degree-``l`` users, ``c`` the number of
    ways a fixed set of users (with these degrees) can connect to a fixed set of
    ``mu`` slots so that the resulting graph is this set, and ``q`` the largest
    user degree.
    """

    mu: int
    nu: int
    profile: dict
    c: int
    q: int
    rows: tuple[int, ...]

    @property
    def representative(self) -> np.ndarray:
        return np.array([[(r >> j) & 1 for j in range(self.mu)] for r in self.rows], dtype=np.uint8)

    @property
    def edges(self) -> int:
        return sum(l * v for l, v in self.profile.items())

    def sort_key(self):
        return (self.mu, self.nu, tuple(self.profile.get(l, 0) for l in range(1, self.mu + 1)), self.rows)

    @classmethod
    def from_rows(cls, rows, mu: int) -> "StoppingSetRecord":
        rows = canonical_form(rows, mu)
        degrees = [_popcount(r) for r in rows]
        profile = dict(sorted(Counter(degrees).items()))
        return cls(mu, len(rows), profile, count_configurations_rows(rows, mu), max(degrees), rows)


def count_configurations_rows(rows, mu: int) -> int:
    total = 0
    for labelled in _labelings(rows, mu):
        # users of equal degree are distinguishable: spread the labelled rows
        # over them, identical rows being interchangeable
        ways = 1
        by_degree = Counter(_popcount(r) for r in labelled)
        for count in by_degree.values():
            ways *= math.factorial(count)
        for mult in Counter(labelled).values():
            ways //= math.factorial(mult)
        total += ways
    return total


def count_configurations(record: StoppingSetRecord) -> int:
    return count_configurations_rows(record.rows, record.mu)


@dataclass(frozen=True)
class Catalog:
    records: tuple[StoppingSetRecord, ...]
    max_cns: int

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def restrict(self, max_cns: int) -> "Catalog":
        return Catalog(tuple(r for r in self.records if r.mu <= max_cns), min(max_cns, self.max_cns))


def _candidate_rows(mu: int, min_degree: int) -> list[int]:
    rows = [r for r in range(1, 1 << mu) if _popcount(r) >= min_degree]
    return sorted(rows, key=lambda r: (_popcount(r), r))


def _search(rows: list[int], chosen: list[int], start: int, mu: int, found: dict) -> None:
    if len(chosen) >= 2:
        core = largest_stopping_set(chosen, mu)
        if core:
            # every extension contains this stopping set, so only the current
            # set itself can still be minimal
            if len(core) == len(chosen) and is_minimal_stopping_set(chosen, mu):
                key = canonical_form(chosen, mu)
                found.setdefault(key, chosen.copy())
            return
    for k in range(start, len(rows)):
        chosen.append(rows[k])
        _search(rows, chosen, k, mu, found)
        chosen.pop()


def enumerate_catalog(max_cns: int = 4, min_degree: int = 1) -> Catalog:
    """All minimal stopping sets spanning at most ``max_cns`` slots, up to
    isomorphism, sorted by (slots, users, degree profile).

    With the default ``min_degree=1`` the catalog serves any repetition law
    (31 sets for ``max_cns=4``); evaluation skips records whose degrees the law
    cannot produce.  ``min_degree=2`` keeps only sets a CSA user can form.
    """
    if not 2 <= max_cns <= MAX_CNS:
        raise ValueError(f"max_cns must lie in [2, {MAX_CNS}]")
    if min_degree not in (1, 2):
        raise ValueError("min_degree must be 1 or 2")
    records = []
    for mu in range(min_degree, max_cns + 1):
        found: dict = {}
        _search(_candidate_rows(mu, min_degree), [], 0, mu, found)
        records.extend(StoppingSetRecord.from_rows(rows, mu) for rows in found.values())
    records.sort(key=StoppingSetRecord.sort_key)
    return Catalog(tuple(records), max_cns)


# -- persistence ---------------------------------------------------------------

_HEADER = "# mu,nu,profile,c,q,representative"


def _format_record(rec: StoppingSetRecord) -> str:
    profile = ";".join(f"{l}:{v}" for l, v in sorted(rec.profile.items()))
    bits = "".join(str(b) for b in rec.representative.ravel())
    return f"{rec.mu},{rec.nu},{profile},{rec.c},{rec.q},{bits}"


def format_catalog(catalog: Catalog) -> str:
    lines = [_HEADER, f"# max_cns={catalog.max_cns}"]
    lines += [_format_record(r) for r in catalog.records]
    return "\n".join(lines) + "\n"


def write_catalog(catalog: Catalog, path) -> None:
    Path(path).write_text(format_catalog(catalog), encoding="utf-8")


def read_catalog(path) -> Catalog:
    records = []
    max_cns = 0
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line.startswith("# max_cns="):
            max_cns = int(line.split("=", 1)[1])
        if not line or line.startswith("#"):
            continue
        mu, nu, profile, c, q, bits = line.split(",")
        mu, nu = int(mu), int(nu)
        if len(bits) != mu * nu:
            raise ValueError(f"representative of {line!r} has the wrong size")
        rows = tuple(
            sum(int(bits[i * mu + j]) << j for j in range(mu)) for i in range(nu)
        )
        prof = {int(k): int(v) for k, v in (item.split(":") for item in profile.split(";"))}
        records.append(StoppingSetRecord(mu, nu, prof, int(c), int(q), rows))
        max_cns = max(max_cns, mu)
    return Catalog(tuple(records), max_cns)
