"""Brute-force reference implementations used only by the tests."""

import itertools
import math
from functools import lru_cache


def edit_cost(ref, hyp):
    """Minimal Levenshtein cost by plain recursion over suffixes."""
    ref, hyp = tuple(ref), tuple(hyp)

    @lru_cache(maxsize=None)
    def go(i, j):
        if i == len(ref):
            return len(hyp) - j
        if j == len(hyp):
            return len(ref) - i
        return min(
            go(i + 1, j + 1) + (ref[i] != hyp[j]),
            go(i + 1, j) + 1,
            go(i, j + 1) + 1,
        )

    return go(0, 0)


def edit_cost_then_indels(ref, hyp):
    """Lexicographic minimum of (edits, insertions + deletions)."""
    ref, hyp = tuple(ref), tuple(hyp)

    @lru_cache(maxsize=None)
    def go(i, j):
        if i == len(ref):
            k = len(hyp) - j
            return (k, k)
        if j == len(hyp):
            k = len(ref) - i
            return (k, k)
        e, g = go(i + 1, j + 1)
        best = (e + (ref[i] != hyp[j]), g)
        for e2, g2 in (go(i + 1, j), go(i, j + 1)):
            best = min(best, (e2 + 1, g2 + 1))
        return best

    return go(0, 0)


def all_strings(alphabet, max_len):
    for n in range(max_len + 1):
        yield from itertools.product(alphabet, repeat=n)


def nucleus_sets(weights, p):
    """Union of all minimum-cardinality subsets whose probability mass reaches ``p``.

    Found by enumerating every subset, so it does not rely on sorting.
    """
    keys = list(weights)
    total = sum(weights.values())
    best_size, members = None, set()
    for size in range(1, len(keys) + 1):
        for combo in itertools.combinations(keys, size):
            if sum(weights[k] for k in combo) / total >= p - 1e-12:
                best_size = size
                members.update(combo)
        if best_size is not None:
            return members
    return set(keys)


def best_sequence(step, vocab_size, max_len, bos, eos):
    """Exhaustive argmax of length-normalised log-probability (ties: lexicographic)."""
    best = None
    for n in range(1, max_len + 1):
        for seq in itertools.product(range(vocab_size), repeat=n):
            if eos in seq[:-1]:
                continue
            if n < max_len and seq[-1] != eos:
                continue
            total, prefix, ok = 0.0, [bos], True
            for tok in seq:
                lp = step([prefix])[0][tok]
                if not math.isfinite(lp):
                    ok = False
                    break
                total += float(lp)
                prefix = prefix + [tok]
            if not ok:
                continue
            key = (-total / n, list(seq))
            if best is None or key < best:
                best = key
    return best[1]
