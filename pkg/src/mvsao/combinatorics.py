"""Perfect matchings, binary step sequences and the field-dependent pairing
weights that multiply each Wick pairing in the trace-moment formulas.

Conventions.  Jumps are ordered pairs (from, to) of colors with from != to,
numbered 0..n-1.  A binary sequence for n jumps has entries m[0..n]; jump k
owns the step (m[k], m[k+1]).  A matching of n jumps is a partition of
{0..n-1} into disjoint pairs, stored as a tuple of (lo, hi) pairs sorted by
their smaller member, which keeps enumeration order canonical and test
fixtures stable.  Jump sequences are treated as abstract ordered pairs here;
whether consecutive jumps chain is a property of the process that produced
them (concatenated paths reset their color at segment boundaries).
"""

from __future__ import annotations

from itertools import product

import numpy as np

Jump = tuple[int, int]
Matching = tuple[tuple[int, int], ...]

N_MAX_DEFAULT = 12

# Allowed (step_1, step_2) combinations for a matched pair of jumps.  Flips
# are the same-direction combinations that contribute a factor -1.
_SAME_ALLOWED = {((0, 0), (1, 1)), ((1, 1), (0, 0)), ((0, 1), (1, 0)), ((1, 0), (0, 1))}
_REVERSED_ALLOWED = {((0, 0), (0, 0)), ((1, 1), (1, 1)), ((0, 1), (1, 0)), ((1, 0), (0, 1))}
_FLIPS = {((0, 1), (1, 0)), ((1, 0), (0, 1))}


class MatchingSizeError(ValueError):
    """Raised for odd sizes or sizes above the configured enumeration cap."""


def reversed_jump(j: Jump) -> Jump:
    return (j[1], j[0])


def enumerate_matchings(n: int, n_max: int = N_MAX_DEFAULT) -> list[Matching]:
    """All perfect matchings of {0..n-1}, in canonical order.

    The recursion pairs the smallest free index with every remaining index,
    which yields exactly (n-1)!! matchings.  n = 0 gives the single empty
    matching.
    """
    if n < 0 or n % 2 != 0:
        raise MatchingSizeError(f"matching size must be a nonnegative even integer, got {n}")
    if n > n_max:
        raise MatchingSizeError(f"matching size {n} exceeds cap {n_max}")

    def rec(free: tuple[int, ...]) -> list[Matching]:
        if not free:
            return [()]
        first, rest = free[0], free[1:]
        out = []
        for i, partner in enumerate(rest):
            remaining = rest[:i] + rest[i + 1:]
            for tail in rec(remaining):
                out.append(((first, partner),) + tail)
        return out

    return rec(tuple(range(n)))


def random_matching(n: int, rng: np.random.Generator) -> Matching:
    """Uniformly random perfect matching of {0..n-1}."""
    if n < 0 or n % 2 != 0:
        raise MatchingSizeError(f"matching size must be a nonnegative even integer, got {n}")
    free = list(range(n))
    pairs = []
    while free:
        first = free.pop(0)
        partner = free.pop(int(rng.integers(len(free))))
        pairs.append((first, partner))
    return tuple(pairs)


def validate_matching(p: Matching, n: int) -> None:
    seen = [idx for pair in p for idx in pair]
    if sorted(seen) != list(range(n)):
        raise ValueError(f"pairs {p} do not partition 0..{n - 1}")


def _pair_relation(j1: Jump, j2: Jump) -> str | None:
    """'same', 'reversed', or None when the jumps are unrelated."""
    if j1 == j2:
        return "same"
    if j1 == reversed_jump(j2):
        return "reversed"
    return None


def respects(m, p: Matching, jumps) -> bool:
    """Whether the binary sequence m is compatible with the matched jumps.

    For every pair {l1, l2} (l1 < l2) the two owned steps must lie in the
    allowed set for the pair's jump relation; same-direction and reversed
    jumps have different allowed sets.  Pairs of unrelated jumps make the
    whole configuration non-respecting.
    """
    m = tuple(int(v) for v in m)
    if len(m) != len(jumps) + 1:
        raise ValueError("binary sequence must have one more entry than there are jumps")
    for l1, l2 in p:
        if l1 > l2:
            l1, l2 = l2, l1
        rel = _pair_relation(jumps[l1], jumps[l2])
        steps = ((m[l1], m[l1 + 1]), (m[l2], m[l2 + 1]))
        if rel == "same":
            if steps not in _SAME_ALLOWED:
                return False
        elif rel == "reversed":
            if steps not in _REVERSED_ALLOWED:
                return False
        else:
            return False
    return True


def count_flips(m, p: Matching, jumps) -> int:
    """Number of matched same-direction pairs whose steps are a flip."""
    m = tuple(int(v) for v in m)
    flips = 0
    for l1, l2 in p:
        if l1 > l2:
            l1, l2 = l2, l1
        if jumps[l1] != jumps[l2]:
            continue
        steps = ((m[l1], m[l1 + 1]), (m[l2], m[l2 + 1]))
        if steps in _FLIPS:
            flips += 1
    return flips


def quaternion_weight(jumps, p: Matching) -> float:
    """The signed, normalized count of respecting binary sequences.

    Direct enumeration of all sequences with endpoints 0; at most 2^(n/2)
    survive the respects filter, so this is cheap at desk scale.
    """
    n = len(jumps)
    if n == 0:
        return 1.0
    total = 0
    for interior in product((0, 1), repeat=n - 1):
        m = (0,) + interior + (0,)
        if respects(m, p, jumps):
            total += (-1) ** count_flips(m, p, jumps)
    return float(total) * 2.0 ** (-n / 2)


def constant_c(kind: str, jumps, p: Matching) -> float:
    """Field-dependent weight of one Wick pairing of the jump sequence.

    R: 1 when every matched pair is the same jump up to orientation, else 0.
    C: 1 when every matched pair is reversed, else 0.
    H: the signed flip sum over respecting binary sequences when the R
    condition holds, else 0.  Always lies in [-1, 1].
    """
    jumps = [tuple(j) for j in jumps]
    n = len(jumps)
    if len(p) * 2 != n:
        raise ValueError("matching does not cover the jump sequence")
    validate_matching(p, n)
    relations = []
    for l1, l2 in p:
        rel = _pair_relation(jumps[min(l1, l2)], jumps[max(l1, l2)])
        if rel is None:
            return 0.0
        relations.append(rel)
    if kind == "R":
        return 1.0
    if kind == "C":
        return 1.0 if all(rel == "reversed" for rel in relations) else 0.0
    if kind == "H":
        return quaternion_weight(jumps, p)
    raise ValueError(f"unknown field kind {kind!r}")
