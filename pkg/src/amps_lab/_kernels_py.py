"""Pure-Python dynamic programs; reference fallback for ``_kernels``."""

MATCH, SUB, INS, DEL = 0, 1, 2, 3


def edit_alignment(ref, hyp):
    """Levenshtein alignment of two int sequences.

    Among minimum-edit alignments the one with the fewest insertions plus
    deletions is chosen, so the (S, I, D) counts are unique and swap
    symmetrically when ``ref`` and ``hyp`` are exchanged.

    Returns (ops, S, I, D) with ``ops`` a list of op codes in order.
    """
    n, m = len(ref), len(hyp)
    big = n + m + 1
    sub_c, gap_c = big, big + 1
    cost = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        cost[i][0] = i * gap_c
    for j in range(1, m + 1):
        cost[0][j] = j * gap_c
    for i in range(1, n + 1):
        ri = ref[i - 1]
        prev, row = cost[i - 1], cost[i]
        for j in range(1, m + 1):
            diag = prev[j - 1] + (0 if ri == hyp[j - 1] else sub_c)
            up = prev[j] + gap_c
            left = row[j - 1] + gap_c
            best = diag
            if up < best:
                best = up
            if left < best:
                best = left
            row[j] = best
    ops = []
    s = ins = dels = 0
    i, j = n, m
    while i > 0 or j > 0:
        c = cost[i][j]
        if i > 0 and j > 0:
            same = ref[i - 1] == hyp[j - 1]
            if cost[i - 1][j - 1] + (0 if same else sub_c) == c:
                if same:
                    ops.append(MATCH)
                else:
                    ops.append(SUB)
                    s += 1
                i -= 1
                j -= 1
                continue
        if i > 0 and cost[i - 1][j] + gap_c == c:
            ops.append(DEL)
            dels += 1
            i -= 1
        else:
            ops.append(INS)
            ins += 1
            j -= 1
    ops.reverse()
    return ops, s, ins, dels


def lcs_length(a, b):
    """Length of the longest common subsequence of two int sequences."""
    n, m = len(a), len(b)
    prev = [0] * (m + 1)
    for i in range(1, n + 1):
        cur = [0] * (m + 1)
        ai = a[i - 1]
        for j in range(1, m + 1):
            if ai == b[j - 1]:
                cur[j] = prev[j - 1] + 1
            else:
                cur[j] = cur[j - 1] if cur[j - 1] > prev[j] else prev[j]
        prev = cur
    return prev[m]
