"""Compare the compiled and pure-Python alignment kernels.

    python benchmarks/bench_kernels.py [--pairs 2000] [--max-len 30]
"""

from __future__ import annotations

import argparse
import importlib
import time

import numpy as np

from amps_lab import _kernels_py


def workload(n: int, max_len: int, seed: int = 0) -> list[tuple[list[int], list[int]]]:
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        a = rng.integers(0, 20, size=int(rng.integers(1, max_len + 1))).tolist()
        b = rng.integers(0, 20, size=int(rng.integers(1, max_len + 1))).tolist()
        out.append((a, b))
    return out


def bench(impl, pairs, repeat: int = 3) -> dict[str, float]:
    res = {}
    for name in ("edit_alignment", "lcs_length"):
        fn = getattr(impl, name)
        best = float("inf")
        for _ in range(repeat):
            t = time.perf_counter()
            for a, b in pairs:
                fn(a, b)
            best = min(best, time.perf_counter() - t)
        res[name] = best
    return res


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--pairs", type=int, default=2000)
    ap.add_argument("--max-len", type=int, default=30)
    args = ap.parse_args()
    pairs = workload(args.pairs, args.max_len)
    impls = {"python": _kernels_py}
    try:
        impls["compiled"] = importlib.import_module("amps_lab._kernels")
    except ImportError:
        print("compiled extension not built; timing the Python fallback only")
    for a, b in pairs[:200]:
        outs = {k: (m.edit_alignment(a, b), m.lcs_length(a, b)) for k, m in impls.items()}
        assert len({repr(v) for v in outs.values()}) == 1, "backends disagree"
    times = {k: bench(m, pairs) for k, m in impls.items()}
    print(f"{args.pairs} pairs, lengths 1..{args.max_len}")
    print(f"{'kernel':<16}" + "".join(f"{k:>14}" for k in times) + ("   speedup" if len(times) == 2 else ""))
    for name in ("edit_alignment", "lcs_length"):
        row = f"{name:<16}" + "".join(f"{times[k][name] * 1e3:>12.1f}ms" for k in times)
        if len(times) == 2:
            row += f"   {times['python'][name] / times['compiled'][name]:7.1f}x"
        print(row)


if __name__ == "__main__":
    main()
