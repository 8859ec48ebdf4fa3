"""Decoding and scoring: WER, METEOR-lite, hard-subset deltas, MAPSSWE."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import kernels
from . import numerics as nx
from .model import BOS, EOS, PAD, MultimodalModel, pad_frames

# -- decoding -------------------------------------------------------------------------

StepFn = Callable[[list[list[int]]], np.ndarray]


def _ban(logp: np.ndarray) -> np.ndarray:
    logp = logp.copy()
    logp[..., PAD] = -np.inf
    logp[..., BOS] = -np.inf
    return logp


class _SpeechStep:
    """Step function over decoder prefixes for one utterance, encoder run once."""

    def __init__(self, model: MultimodalModel, X: np.ndarray):
        self.model = model
        X = np.asarray(X, dtype=np.float64)
        with nx.no_grad():
            self.enc = model.encode_speech(X[None], np.array([X.shape[0]]))
        self.L = X.shape[0]

    def __call__(self, prefixes: list[list[int]]) -> np.ndarray:
        n = len(prefixes)
        y = np.asarray(prefixes, dtype=np.int64)
        enc = self.enc if n == 1 else nx.tensor(np.repeat(self.enc.data, n, axis=0))
        with nx.no_grad():
            logits = self.model.decode(enc, np.full(n, self.L), y)
        return _ban(nx._log_softmax_np(logits.data[:, -1], -1))


def greedy_search(step: StepFn, max_len: int, bos: int = BOS, eos: int = EOS) -> list[int]:
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    seq = [bos]
    while len(seq) - 1 < max_len:
        tok = int(np.argmax(step([seq])[0]))
        seq.append(tok)
        if tok == eos:
            break
    return seq[1:]


def beam_search(step: StepFn, width: int, max_len: int, bos: int = BOS, eos: int = EOS) -> list[int]:
    """Length-normalised beam search.

    Candidates are ranked by cumulative log-probability (ties: lexicographically
    smaller sequence); a hypothesis is complete at EOS or at ``max_len``. The
    greedy path always competes in the final ranking, so the result never has
    a lower normalised score than greedy decoding.
    """
    if width < 1:
        raise ValueError("width must be >= 1")
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    alive: list[tuple[float, list[int]]] = [(0.0, [])]
    finished: list[tuple[float, list[int]]] = []
    for _ in range(max_len):
        lp = step([[bos] + seq for _, seq in alive])
        cands = []
        for (score, seq), row in zip(alive, lp):
            for tok in np.flatnonzero(np.isfinite(row)):
                cands.append((score + float(row[tok]), seq + [int(tok)]))
        cands.sort(key=lambda c: (-c[0], c[1]))
        alive = []
        for score, seq in cands[:width]:
            if seq[-1] == eos or len(seq) == max_len:
                finished.append((score / len(seq), seq))
            else:
                alive.append((score, seq))
        if not alive:
            break
    if width > 1:
        g = greedy_search(step, max_len, bos, eos)
        finished.append((sequence_score(step, g, bos) / len(g), g))
    finished.sort(key=lambda c: (-c[0], c[1]))
    return finished[0][1]


def sequence_score(step: StepFn, seq: Sequence[int], bos: int = BOS) -> float:
    """Cumulative log-probability of ``seq`` (without BOS)."""
    total, prefix = 0.0, [bos]
    for tok in seq:
        total += float(step([prefix])[0][tok])
        prefix = prefix + [int(tok)]
    return total


def decode_greedy(model: MultimodalModel, X: np.ndarray, max_len: int) -> list[int]:
    """Argmax decoding from BOS until EOS or ``max_len`` tokens (ties: smaller id)."""
    return greedy_search(_SpeechStep(model, X), max_len)


def decode_beam(model: MultimodalModel, X: np.ndarray, width: int, max_len: int) -> list[int]:
    return beam_search(_SpeechStep(model, X), width, max_len)


def greedy_batch(model: MultimodalModel, frames: Sequence[np.ndarray], max_len: int) -> list[list[int]]:
    """Greedy decoding of many utterances at once; same rule as ``decode_greedy``."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    F, lens = pad_frames(list(frames))
    B = len(frames)
    with nx.no_grad():
        enc = model.encode_speech(F, lens)
        y = np.full((B, 1), BOS, dtype=np.int64)
        done = np.zeros(B, dtype=bool)
        for _ in range(max_len):
            logits = model.decode(enc, lens, y)
            nxt = np.argmax(_ban(nx._log_softmax_np(logits.data[:, -1], -1)), axis=-1)
            nxt = np.where(done, PAD, nxt)
            y = np.concatenate([y, nxt[:, None]], axis=1)
            done |= nxt == EOS
            if done.all():
                break
    out = []
    for row in y[:, 1:]:
        seq = []
        for t in row:
            if t == PAD:
                break
            seq.append(int(t))
            if t == EOS:
                break
        out.append(seq)
    return out


@dataclass
class DecodeConfig:
    method: str = "greedy"  # greedy | beam
    width: int = 5
    max_len: int = 16
    batch_size: int = 100


def transcribe(model, utts, cfg: DecodeConfig | None = None) -> list[list[int]]:
    """Hypothesis token ids for every utterance, in input order."""
    cfg = cfg or DecodeConfig()
    if hasattr(model, "transcribe"):
        return model.transcribe(utts)
    if cfg.method == "beam":
        return [decode_beam(model, u.frames, cfg.width, cfg.max_len) for u in utts]
    out: list[list[int]] = []
    for k in range(0, len(utts), cfg.batch_size):
        chunk = utts[k:k + cfg.batch_size]
        out.extend(greedy_batch(model, [u.frames for u in chunk], cfg.max_len))
    return out


# -- WER ------------------------------------------------------------------------------


@dataclass
class Alignment:
    ops: list[tuple[str, str | None, str | None]]
    S: int
    I: int
    D: int
    N: int

    @property
    def matches(self) -> int:
        return self.N - self.S - self.D

    @property
    def errors(self) -> int:
        return self.S + self.I + self.D


_OP_NAMES = {kernels.MATCH: "MATCH", kernels.SUB: "SUB", kernels.INS: "INS", kernels.DEL: "DEL"}


def align(ref: Sequence[str], hyp: Sequence[str]) -> Alignment:
    table: dict[str, int] = {}
    r = [table.setdefault(w, len(table)) for w in ref]
    h = [table.setdefault(w, len(table)) for w in hyp]
    codes, S, I, D = kernels.edit_alignment(r, h)
    ops, i, j = [], 0, 0
    for c in codes:
        name = _OP_NAMES[c]
        if name in ("MATCH", "SUB"):
            ops.append((name, ref[i], hyp[j]))
            i += 1
            j += 1
        elif name == "DEL":
            ops.append((name, ref[i], None))
            i += 1
        else:
            ops.append((name, None, hyp[j]))
            j += 1
    return Alignment(ops, S, I, D, len(ref))


def wer(ref: Sequence[str], hyp: Sequence[str]) -> tuple[float, Alignment]:
    """(S + I + D) / N from a minimum-edit alignment."""
    if len(ref) == 0:
        raise ValueError("WER is undefined for an empty reference")
    a = align(ref, hyp)
    return a.errors / a.N, a


# -- METEOR-lite ------------------------------------------------------------------------


def meteor_lite(
    ref: Sequence[str],
    hyp: Sequence[str],
    synonyms: Mapping[str, int] | None = None,
    stemmer: Callable[[str], str] | None = None,
    alpha: float = 0.9,
    beta: float = 3.0,
    gamma: float = 0.5,
) -> float:
    """Simplified METEOR on a 0-100 scale.

    Words are aligned in three passes (exact, stem, synonym class), each pass
    left to right over still-unmatched words. The recall-weighted F-mean is
    scaled by 1 - gamma * (chunks / matches) ** beta.
    """
    if len(ref) == 0:
        raise ValueError("METEOR is undefined for an empty reference")
    if not hyp:
        return 0.0
    synonyms = synonyms or {}
    keys = [lambda w: w]
    if stemmer is not None:
        keys.append(stemmer)
    keys.append(lambda w: synonyms.get(w, ("__self__", w)))
    ref_used = [False] * len(ref)
    link: dict[int, int] = {}
    for key in keys:
        for j, hw in enumerate(hyp):
            if j in link:
                continue
            k = key(hw)
            for i, rw in enumerate(ref):
                if not ref_used[i] and key(rw) == k:
                    ref_used[i] = True
                    link[j] = i
                    break
    m = len(link)
    if m == 0:
        return 0.0
    P, R = m / len(hyp), m / len(ref)
    fmean = P * R / (alpha * P + (1 - alpha) * R)
    chunks, prev = 0, None
    for j in sorted(link):
        i = link[j]
        if prev is None or j != prev[0] + 1 or i != prev[1] + 1:
            chunks += 1
        prev = (j, i)
    penalty = gamma * (chunks / m) ** beta
    return 100.0 * fmean * (1.0 - penalty)


# -- significance -----------------------------------------------------------------------


def _normal_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def mapsswe(errA: Sequence[float], errB: Sequence[float]) -> tuple[float, float]:
    """Matched-pairs sentence-segment word error test.

    Z is the mean per-segment difference errA - errB over its standard
    error (sample standard deviation); p is two-sided under the normal law.
    """
    a = np.asarray(errA, dtype=np.float64)
    b = np.asarray(errB, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"segment count mismatch: {a.shape} vs {b.shape}")
    n = a.size
    if n < 2:
        raise ValueError("mapsswe needs at least two segments")
    d = a - b
    mu = d.mean()
    sd = d.std(ddof=1)
    if sd == 0.0:
        return (0.0, 1.0) if mu == 0.0 else (math.copysign(math.inf, mu), 0.0)
    z = mu / (sd / math.sqrt(n))
    p = min(1.0, 2.0 * _normal_sf(abs(z)))
    return float(z), float(p)


# -- reports ------------------------------------------------------------------------------


@dataclass
class UttRow:
    id: str
    kind: str
    ref: list[str]
    hyp: list[str]
    wer: float
    errors: int
    ref_len: int
    S: int
    I: int
    D: int
    meteor: float


def score_rows(utts, hyps: Sequence[Sequence[int]], vocab) -> list[UttRow]:
    syn = {w: c for w, c in zip(vocab.words, vocab.classes) if c >= 0}
    from .corpus import stem

    rows = []
    for u, h in zip(utts, hyps):
        ref = vocab.decode(u.transcript)
        hyp = vocab.decode(h)
        rate, a = wer(ref, hyp)
        rows.append(UttRow(u.id, u.kind, ref, hyp, rate, a.errors, a.N, a.S, a.I, a.D,
                           meteor_lite(ref, hyp, syn, stem)))
    rows.sort(key=lambda r: r.id)
    return rows


def corpus_wer(rows: Sequence[UttRow]) -> float:
    n = sum(r.ref_len for r in rows)
    return sum(r.errors for r in rows) / n if n else 0.0


def aggregate(rows: Sequence[UttRow]) -> dict:
    if not rows:
        return {"n": 0, "wer": 0.0, "wer_macro": 0.0, "meteor": 0.0}
    return {
        "n": len(rows),
        "wer": corpus_wer(rows),
        "wer_macro": float(np.mean([r.wer for r in rows])),
        "meteor": float(np.mean([r.meteor for r in rows])),
    }


@dataclass
class EvalReport:
    rows: list[UttRow]
    all: dict
    by_kind: dict
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.rows)

    def by_id(self) -> dict[str, UttRow]:
        return {r.id: r for r in self.rows}

    def write_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for r in self.rows:
                fh.write(json.dumps(asdict(r), sort_keys=True) + "\n")

    def summary(self) -> dict:
        return {"all": self.all, "by_kind": self.by_kind, "meta": self.meta}


def evaluate(model, utts, vocab, cfg: DecodeConfig | None = None, meta: dict | None = None) -> EvalReport:
    hyps = transcribe(model, list(utts), cfg)
    return report_from_hypotheses(utts, hyps, vocab, meta)


def report_from_hypotheses(utts, hyps, vocab, meta: dict | None = None) -> EvalReport:
    rows = score_rows(utts, hyps, vocab)
    kinds = sorted({r.kind for r in rows})
    return EvalReport(rows, aggregate(rows), {k: aggregate([r for r in rows if r.kind == k]) for k in kinds},
                      dict(meta or {}))


METRICS = ("wer", "wer_macro", "meteor")


def hard_ids(rows: Sequence[UttRow], n: int) -> list[str]:
    """Top-n utterance ids by descending WER; ties by id."""
    order = sorted(rows, key=lambda r: (-r.wer, r.id))
    return [r.id for r in order[: min(n, len(order))]]


@dataclass
class Comparison:
    n_hard: int
    hard_ids: list[str]
    base_all: dict
    other_all: dict
    base_hard: dict
    other_hard: dict
    delta_all: dict
    delta_hard: dict
    z: float
    p: float

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def significant(self) -> bool:
        return self.p < 0.05


def hard_subset_report(base: Sequence[UttRow], other: Sequence[UttRow], n: int = 100) -> Comparison:
    """Deltas (other - base) on all data and on base's n hardest utterances.

    The hard set depends only on ``base``; the MAPSSWE test runs on
    per-utterance error counts over all segments.
    """
    a = {r.id: r for r in base}
    b = {r.id: r for r in other}
    if set(a) != set(b):
        raise ValueError("systems were scored on different utterance ids")
    ids = sorted(a)
    hard = hard_ids(list(a.values()), n)
    a_all, b_all = aggregate([a[i] for i in ids]), aggregate([b[i] for i in ids])
    hard_sorted = sorted(hard)
    a_h, b_h = aggregate([a[i] for i in hard_sorted]), aggregate([b[i] for i in hard_sorted])
    z, p = (0.0, 1.0) if len(ids) < 2 else mapsswe([a[i].errors for i in ids], [b[i].errors for i in ids])
    return Comparison(
        n, hard, a_all, b_all, a_h, b_h,
        {m: b_all[m] - a_all[m] for m in METRICS},
        {m: b_h[m] - a_h[m] for m in METRICS},
        z, p,
    )


def render_table(systems: Mapping[str, EvalReport], baseline: str | None = None,
                 target: str | None = None, n_hard: int = 100) -> str:
    """Plain-text table: one column per system, then hard-n and delta columns."""
    names = list(systems)
    cmp = None
    if baseline and target and baseline in systems and target in systems:
        cmp = hard_subset_report(systems[baseline].rows, systems[target].rows, n_hard)
    head = ["Metric"] + names
    if cmp is not None:
        head += [f"Hard-{n_hard} {baseline}", f"Hard-{n_hard} {target}", "dHard", "dAll"]
    lines = [head]
    for m, label in (("wer", "WER (%)"), ("meteor", "METEOR")):
        scale = 100.0 if m == "wer" else 1.0
        row = [label] + [f"{systems[s].all[m] * scale:.2f}" for s in names]
        if cmp is not None:
            # improvements: positive is better for both metrics
            sign = -1.0 if m == "wer" else 1.0
            row += [f"{cmp.base_hard[m] * scale:.2f}", f"{cmp.other_hard[m] * scale:.2f}",
                    f"{sign * cmp.delta_hard[m] * scale:+.2f}", f"{sign * cmp.delta_all[m] * scale:+.2f}"]
        lines.append(row)
    widths = [max(len(r[k]) for r in lines) for k in range(len(head))]
    out = [" | ".join(c.ljust(w) for c, w in zip(r, widths)) for r in lines]
    out.insert(1, "-+-".join("-" * w for w in widths))
    if cmp is not None:
        flag = "significant" if cmp.significant else "not significant"
        out.append(f"mapsswe {baseline} vs {target}: Z={cmp.z:.4f} p={cmp.p:.4g} ({flag} at p<0.05)")
    return "\n".join(out)


def write_curve_csv(path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
