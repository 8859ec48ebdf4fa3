import importlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from amps_lab import _kernels_py, kernels

from .oracles import all_strings, edit_cost_then_indels

BACKENDS = [_kernels_py]
try:
    BACKENDS.append(importlib.import_module("amps_lab._kernels"))
except ImportError:  # extension not built
    pass


def replay(ref, hyp, ops):
    i = j = 0
    out = []
    for op in ops:
        if op in (kernels.MATCH, kernels.SUB):
            assert (ref[i] == hyp[j]) == (op == kernels.MATCH)
            out.append(hyp[j])
            i += 1
            j += 1
        elif op == kernels.DEL:
            i += 1
        else:
            out.append(hyp[j])
            j += 1
    assert i == len(ref) and j == len(hyp)
    return out


@pytest.mark.parametrize("impl", BACKENDS, ids=lambda m: m.__name__.rsplit(".", 1)[-1])
def test_alignment_matches_oracle_small(impl):
    for ref in all_strings((0, 1), 4):
        for hyp in all_strings((0, 1), 4):
            ops, S, I, D = impl.edit_alignment(list(ref), list(hyp))
            assert replay(ref, hyp, ops) == list(hyp)
            assert (S + I + D, I + D) == edit_cost_then_indels(ref, hyp)


@pytest.mark.parametrize("impl", BACKENDS, ids=lambda m: m.__name__.rsplit(".", 1)[-1])
def test_lcs(impl):
    assert impl.lcs_length([1, 2, 3, 4], [1, 2, 3, 4]) == 4
    assert impl.lcs_length([1, 2, 3, 4], [4, 3, 2, 1]) == 1
    assert impl.lcs_length([], [1]) == 0
    assert impl.lcs_length([1, 3, 2, 4], [1, 2, 3, 4]) == 3


def test_backend_selected():
    assert kernels.BACKEND in ("compiled", "python")


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled extension not built")
@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 4), max_size=12), st.lists(st.integers(0, 4), max_size=12))
def test_backends_agree(a, b):
    py, cy = BACKENDS
    assert py.edit_alignment(a, b) == cy.edit_alignment(a, b)
    assert py.lcs_length(a, b) == cy.lcs_length(a, b)


def test_pure_python_env_switch(monkeypatch):
    monkeypatch.setenv("AMPS_LAB_PURE_PYTHON", "1")
    mod = importlib.reload(kernels)
    try:
        assert mod.BACKEND == "python"
    finally:
        monkeypatch.delenv("AMPS_LAB_PURE_PYTHON")
        importlib.reload(kernels)


def test_accepts_numpy_input():
    ops, S, I, D = kernels.edit_alignment(np.array([1, 2, 3]), np.array([1, 3]))
    assert (S, I, D) == (0, 0, 1)
