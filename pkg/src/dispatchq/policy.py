"""Periodic routing policies.

Queues are addressed by 1-based pairs ``(r, kappa)``: type ``r`` in
``1..R`` and replica ``kappa`` in ``1..k``.  A policy is one period of the
routing word; job ``n`` (0-based) goes to ``assignment[n % period]``.

Two families are built here:

* round-robin-within-type policies, fixed by a *type word* (a multiset
  permutation with ``p_r`` copies of each type ``r``) and the replica
  count ``k``; replicas of a type are visited cyclically from replica 1;
* general fraction policies, any period realizing exact rational
  routing fractions ``q``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property, lru_cache, reduce
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ConfigurationError

Queue = tuple[int, int]

#: refuse to enumerate type words longer than this
ENUMERATION_CAP = 12
#: refuse to materialize periods longer than this
PERIOD_CAP = 10**6

CPK = "C_p"
GENERAL = "general-q"


def as_pvector(p: Iterable[int]) -> tuple[int, ...]:
    p = tuple(p)
    if not p or any(int(x) != x or x < 1 for x in p):
        raise ConfigurationError(f"p must be a non-empty vector of positive integers, got {p}")
    return tuple(int(x) for x in p)


def _to_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, bool):
        raise ConfigurationError("boolean is not a routing fraction")
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, float):
        if not math.isfinite(x):
            raise ConfigurationError(f"non-finite routing fraction {x}")
        # decimal literal semantics: 0.1 means 1/10
        return Fraction(repr(x))
    if isinstance(x, str):
        try:
            return Fraction(x)
        except (ValueError, ZeroDivisionError):
            raise ConfigurationError(f"cannot parse routing fraction {x!r}") from None
    raise ConfigurationError(f"unsupported routing fraction {x!r}")


@dataclass(frozen=True)
class RoutingFractions:
    """Exact routing fractions ``q[r-1][kappa-1]``, summing to exactly 1."""

    q: tuple[tuple[Fraction, ...], ...]

    def __post_init__(self):
        rows = tuple(tuple(_to_fraction(x) for x in row) for row in self.q)
        if not rows or len({len(row) for row in rows}) != 1 or not rows[0]:
            raise ConfigurationError("q must be a non-empty R x k matrix")
        flat = [x for row in rows for x in row]
        if any(x < 0 for x in flat):
            raise ConfigurationError("routing fractions must be non-negative")
        if sum(flat) != 1:
            raise ConfigurationError(f"routing fractions sum to {sum(flat)}, not 1")
        object.__setattr__(self, "q", rows)

    @property
    def R(self) -> int:
        return len(self.q)

    @property
    def k(self) -> int:
        return len(self.q[0])

    @property
    def n_star(self) -> int:
        return reduce(math.lcm, (x.denominator for row in self.q for x in row), 1)

    def __getitem__(self, queue: Queue) -> Fraction:
        r, kappa = queue
        return self.q[r - 1][kappa - 1]

    def queues(self) -> list[Queue]:
        return [(r + 1, c + 1) for r in range(self.R) for c in range(self.k)]

    def type_totals(self) -> tuple[Fraction, ...]:
        return tuple(sum(row, Fraction(0)) for row in self.q)

    def as_array(self) -> np.ndarray:
        return np.array([[float(x) for x in row] for row in self.q])


def n_star(q) -> int:
    """Smallest ``n`` with ``n*q`` integral, for a fraction matrix (or vector) ``q``."""
    if not isinstance(q, RoutingFractions):
        rows = list(q)
        if rows and not isinstance(rows[0], (list, tuple)):
            rows = [[x] for x in rows]
        q = RoutingFractions(tuple(tuple(row) for row in rows))
    return q.n_star


@dataclass(frozen=True)
class PeriodicPolicy:
    """One period of a routing word over queues ``(r, kappa)``.

    For round-robin-within-type policies ``type_word`` is set and the
    assignment (period ``k * len(type_word)``) is generated on demand.
    """

    R: int
    k: int
    class_tag: str
    type_word: Optional[tuple[int, ...]] = None
    explicit_assignment: Optional[tuple[Queue, ...]] = None

    @cached_property
    def assignment(self) -> tuple[Queue, ...]:
        if self.explicit_assignment is not None:
            return self.explicit_assignment
        word, k = self.type_word, self.k
        if k * len(word) > PERIOD_CAP:
            raise ConfigurationError(f"period {k * len(word)} exceeds cap {PERIOD_CAP}")
        nxt = [0] * (self.R + 1)
        out = []
        for _ in range(k):
            for r in word:
                out.append((r, nxt[r] + 1))
                nxt[r] = (nxt[r] + 1) % k
        return tuple(out)

    @property
    def period(self) -> int:
        if self.type_word is not None:
            return self.k * len(self.type_word)
        return len(self.explicit_assignment)

    @cached_property
    def p(self) -> Optional[tuple[int, ...]]:
        if self.type_word is None:
            return None
        return tuple(self.type_word.count(r) for r in range(1, self.R + 1))

    @cached_property
    def counts(self) -> dict[Queue, int]:
        out = {(r, c): 0 for r in range(1, self.R + 1) for c in range(1, self.k + 1)}
        if self.type_word is not None:
            for r, pr in enumerate(self.p, start=1):
                for c in range(1, self.k + 1):
                    out[(r, c)] = pr
            return out
        for queue in self.assignment:
            out[queue] += 1
        return out

    @cached_property
    def fractions(self) -> RoutingFractions:
        L = self.period
        return RoutingFractions(
            tuple(
                tuple(Fraction(self.counts[(r, c)], L) for c in range(1, self.k + 1))
                for r in range(1, self.R + 1)
            )
        )

    def type_sequence(self) -> tuple[int, ...]:
        """Type component of one period of the routing word."""
        return tuple(r for r, _ in self.assignment)

    def flat_assignment(self) -> np.ndarray:
        """Assignment as 0-based flat queue indices ``(r-1)*k + (kappa-1)``."""
        return np.array([(r - 1) * self.k + (c - 1) for r, c in self.assignment], dtype=np.int64)

    def queues_in_use(self) -> list[Queue]:
        return [q for q, c in self.counts.items() if c > 0]

    def describe(self) -> dict:
        if self.type_word is not None:
            return {"class": self.class_tag, "type_sequence": list(self.type_word), "k": self.k}
        return {
            "class": self.class_tag,
            "k": self.k,
            "assignment": [list(x) for x in self.assignment],
        }


def _check_type_word(seq: Sequence[int]) -> tuple[tuple[int, ...], int]:
    seq = tuple(int(x) for x in seq)
    if not seq:
        raise ConfigurationError("type sequence must be non-empty")
    R = max(seq)
    if min(seq) < 1 or any(r not in seq for r in range(1, R + 1)):
        raise ConfigurationError(f"type sequence must use every type 1..{R} at least once: {seq}")
    return seq, R


def build_cpk(seq: Sequence[int], k: int, R: Optional[int] = None) -> PeriodicPolicy:
    """Round-robin-within-type policy with type word ``seq`` and ``k`` replicas per type."""
    seq, r_max = _check_type_word(seq)
    if int(k) != k or k < 1:
        raise ConfigurationError(f"k must be a positive integer, got {k}")
    if R is not None and R != r_max:
        raise ConfigurationError(f"type sequence covers {r_max} types, expected {R}")
    return PeriodicPolicy(R=r_max, k=int(k), class_tag=CPK, type_word=seq)


def scale_policy(base: PeriodicPolicy, k: int) -> PeriodicPolicy:
    """Natural scaling: keep the type word of a ``k=1`` round-robin policy, use ``k`` replicas."""
    if base.class_tag != CPK or base.k != 1:
        raise ConfigurationError("scale_policy needs a round-robin-within-type policy with k=1")
    if k == 1:
        return base
    return build_cpk(base.type_word, k)


def enumerate_type_sequences(p: Sequence[int], cap: int = ENUMERATION_CAP) -> list[tuple[int, ...]]:
    """All distinct words with ``p_r`` copies of each type ``r``, in lexicographic order."""
    return [tuple(w) for w in type_sequence_array(p, cap).tolist()]


def type_sequence_array(p: Sequence[int], cap: int = ENUMERATION_CAP) -> np.ndarray:
    """The words of :func:`enumerate_type_sequences` as rows of a read-only integer array."""
    p = as_pvector(p)
    if sum(p) > cap:
        raise ConfigurationError(f"|p| = {sum(p)} exceeds the enumeration cap {cap}")
    return _words(p)


@lru_cache(maxsize=4096)
def _words(p: tuple[int, ...]) -> np.ndarray:
    # words starting with type r, then every word of the remaining multiset
    if sum(p) == 0:
        out = np.zeros((1, 0), dtype=np.int16)
    else:
        blocks = []
        for r, pr in enumerate(p):
            if pr:
                rest = _words(p[:r] + (pr - 1,) + p[r + 1:])
                head = np.full((rest.shape[0], 1), r + 1, dtype=np.int16)
                blocks.append(np.hstack([head, rest]))
        out = np.vstack(blocks)
    out.setflags(write=False)
    return out


def class_cardinality(p: Sequence[int]) -> int:
    """``|p|! / prod(p_r!)``."""
    p = as_pvector(p)
    return math.factorial(sum(p)) // math.prod(math.factorial(x) for x in p)


@dataclass(frozen=True)
class PatternProfile:
    """Dispatcher-arrival counts between consecutive visits to queue ``(r, kappa)``."""

    r: int
    kappa: int
    gaps: tuple[int, ...]

    @property
    def total(self) -> int:
        return sum(self.gaps)


def pattern_profile(policy: PeriodicPolicy, r: int, kappa: int = 1) -> PatternProfile:
    """Gap profile of queue ``(r, kappa)`` over one period, starting from its first visit."""
    if not (1 <= r <= policy.R and 1 <= kappa <= policy.k):
        raise ConfigurationError(f"queue ({r}, {kappa}) is outside the {policy.R}x{policy.k} system")
    if policy.type_word is not None:
        positions = _cpk_visit_positions(policy.type_word, policy.k, r, kappa)
    else:
        positions = [n for n, qq in enumerate(policy.assignment) if qq == (r, kappa)]
    if not positions:
        raise ValueError(f"queue ({r}, {kappa}) is never visited")
    L = policy.period
    gaps = [b - a for a, b in zip(positions, positions[1:])]
    gaps.append(positions[0] + L - positions[-1])
    return PatternProfile(r, kappa, tuple(gaps))


def _cpk_visit_positions(word: tuple[int, ...], k: int, r: int, kappa: int) -> list[int]:
    # the t-th type-r slot (0-based) sits at norm*(t // p_r) + slots[t % p_r]
    # and goes to replica t % k + 1
    norm = len(word)
    slots = [n for n, x in enumerate(word) if x == r]
    pr = len(slots)
    return [norm * (t // pr) + slots[t % pr] for t in range(kappa - 1, k * pr, k)]


def cpk_gap_table(seq, r: int, k_values: Sequence[int], kappa=1) -> np.ndarray:
    """Gap profiles of queue ``(r, kappa)`` for many ``k`` at once.

    For a single word the result has one row per ``k``, and row ``i`` equals
    ``pattern_profile(build_cpk(seq, k_values[i]), r, kappa).gaps``.  A 2-D
    array of words (all with the same type counts) gives shape
    ``(words, k, p_r)``.  ``kappa`` is one replica index or one per ``k``.
    """
    words = np.asarray(seq)
    single = words.ndim == 1
    words = np.atleast_2d(words)
    n_words, norm = words.shape
    hit = words == r
    pr = int(hit[0].sum())
    if pr == 0:
        raise ConfigurationError(f"type {r} does not occur in {tuple(words[0].tolist())}")
    if np.any(hit.sum(axis=1) != pr):
        raise ConfigurationError(f"words disagree on the count of type {r}")
    slots = np.nonzero(hit)[1].reshape(n_words, pr).astype(np.int64)
    k = np.asarray(k_values, dtype=np.int64)[:, None]
    kap = np.broadcast_to(np.asarray(kappa, dtype=np.int64), k.shape[:1])[:, None]
    if np.any(kap < 1) or np.any(kap > k):
        raise ConfigurationError(f"replica index {kappa} out of range for k in {list(k_values)}")
    t = (kap - 1) + k * np.arange(pr, dtype=np.int64)[None, :]
    pos = norm * (t // pr)[None] + slots[:, t % pr]
    wrap = pos[..., :1] + (k * norm)[None] - pos[..., -1:]
    table = np.concatenate([np.diff(pos, axis=-1), wrap], axis=-1)
    return table[0] if single else table


def gap_shift_holds(words, r: int, m_max: int = 20) -> np.ndarray:
    """Per-word check of ``a(k + p_r) == a(k) + |p|`` for a batch of words with equal type counts."""
    words = np.atleast_2d(np.asarray(words))
    pr = int(np.count_nonzero(words[0] == r))
    if pr == 0:
        raise ConfigurationError(f"type {r} does not occur in the words")
    # rows k = p_r + 1 .. p_r*m_max + p_r cover every (m, i) pair and its predecessor
    k_values = np.arange(pr + 1, pr * m_max + pr + 1)
    table = cpk_gap_table(words, r, k_values)
    return np.all(table[:, pr:] == table[:, :-pr] + words.shape[1], axis=(1, 2))


def verify_fact1(seq: Sequence[int], r: int, m_max: int = 20) -> bool:
    """Check ``a_j(p_r*m + i) == a_j(p_r*(m-1) + i) + |p|`` for all ``m`` in 2..m_max, ``i`` in 1..p_r."""
    seq, _ = _check_type_word(seq)
    return bool(gap_shift_holds([seq], r, m_max)[0])


def gap_ratio_limit_check(seq: Sequence[int], r: int, j: int, k_list: Sequence[int]) -> list[float]:
    """The series ``a_{j,r}(k) / k`` over ``k_list``; tends to ``|p| / p_r``."""
    seq, _ = _check_type_word(seq)
    if list(k_list) != sorted(set(k_list)):
        raise ConfigurationError("k_list must be strictly increasing")
    return [pattern_profile(build_cpk(seq, k), r, 1).gaps[j - 1] / k for k in k_list]


def random_q_policy(q, seed: int, cap: int = PERIOD_CAP) -> PeriodicPolicy:
    """A seeded shuffle of the multiset holding ``n_star*q[r,kappa]`` copies of each queue."""
    if not isinstance(q, RoutingFractions):
        q = RoutingFractions(tuple(tuple(row) for row in q))
    n = q.n_star
    if n > cap:
        raise ConfigurationError(f"n* = {n} exceeds the period cap {cap}")
    items = [queue for queue in q.queues() for _ in range(int(q[queue] * n))]
    order = np.random.default_rng(seed).permutation(len(items))
    return PeriodicPolicy(
        R=q.R, k=q.k, class_tag=GENERAL, explicit_assignment=tuple(items[i] for i in order)
    )


def explicit_policy(assignment: Sequence[Sequence[int]], R: int, k: int) -> PeriodicPolicy:
    """A policy given literally as one period of ``(r, kappa)`` pairs."""
    word = tuple((int(a), int(b)) for a, b in assignment)
    if not word:
        raise ConfigurationError("empty assignment")
    if any(not (1 <= a <= R and 1 <= b <= k) for a, b in word):
        raise ConfigurationError(f"assignment references a queue outside {R}x{k}")
    if len(word) > PERIOD_CAP:
        raise ConfigurationError(f"period {len(word)} exceeds cap {PERIOD_CAP}")
    return PeriodicPolicy(R=R, k=k, class_tag=GENERAL, explicit_assignment=word)


def is_policy_for(policy: PeriodicPolicy, q: RoutingFractions) -> bool:
    """Membership of ``policy`` in the fraction class of ``q``."""
    return policy.R == q.R and policy.k == q.k and policy.fractions == q


def in_aggregate_class(policy: PeriodicPolicy, p: Sequence[int]) -> bool:
    """True when the type-``r`` queues jointly receive fraction ``p_r/|p|`` of the jobs."""
    p = as_pvector(p)
    if policy.R != len(p):
        return False
    norm = sum(p)
    return all(t == Fraction(pr, norm) for t, pr in zip(policy.fractions.type_totals(), p))


def lcm_of(p: Sequence[int]) -> int:
    return reduce(math.lcm, as_pvector(p), 1)
