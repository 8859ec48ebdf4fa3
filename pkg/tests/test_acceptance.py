"""Acceptance criteria, one test per criterion, one PASS/FAIL line each.

The synthetic experiment (criteria 5 and 6) drives the ``amps-lab`` CLI
end to end on three seeds; it takes several minutes.
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from amps_lab import cli
from amps_lab import corpus as C
from amps_lab import evaluation as E
from amps_lab import model as M
from amps_lab import numerics as nx
from amps_lab import training as T

from .oracles import all_strings, best_sequence, edit_cost, nucleus_sets

ROOT = Path(__file__).resolve().parents[1]
EXPERIMENT_INI = ROOT / "configs" / "desk_experiment.ini"
SEEDS = (0, 1, 2)


# 1 -------------------------------------------------------------------------------------------


def op_battery(rng):
    """(name, loss closure, inputs) for every differentiable primitive."""
    P = lambda *s: nx.parameter(rng.normal(size=s))
    W = lambda *s: rng.normal(size=s)
    pos = nx.parameter(rng.uniform(0.5, 2.0, (4,)))
    a, b, c = P(3, 4), P(4), P(4, 2)
    x3 = P(2, 3, 4)
    w34, w38, w64, w33, w253, w43 = W(3, 4), W(3, 8), W(6, 4), W(3, 3), W(2, 5, 3), W(4, 3)
    seq, kern = P(2, 5, 3), P(3, 3)
    table = P(6, 3)
    lg = P(2, 3, 5)
    yield "add/mul/broadcast", lambda: ((a + b) * a * b).sum(), [a, b]
    yield "sub/neg", lambda: (-(a - b) * w34).sum(), [a, b]
    yield "reciprocal/div", lambda: (a / (pos * pos + 1.0)).sum(), [a, pos]
    yield "exp", lambda: (nx.exp(a) * w34).sum(), [a]
    yield "log", lambda: nx.log(pos).sum(), [pos]
    yield "gelu", lambda: (nx.gelu(a) * w34).sum(), [a]
    yield "matmul", lambda: ((x3 @ c) * (x3 @ c)).sum(), [x3, c]
    bias = P(2)
    yield "linear", lambda: (nx.linear(a, c, bias) * nx.linear(a, c, bias)).sum(), [a, c, bias]
    yield "reshape/transpose/swapaxes", lambda: (nx.swapaxes(nx.transpose(x3, (1, 0, 2)), 1, 2).reshape(3, 8) * w38).sum(), [x3]
    yield "getitem", lambda: (a[np.array([0, 0, 2]), 1:] * w33).sum(), [a]
    yield "concat", lambda: (nx.concat([a, a * 2.0], axis=0) * w64).sum(), [a]
    yield "sum/mean", lambda: (nx.sum_(x3, axis=1) * nx.mean(x3, axis=1)).sum(), [x3]
    yield "softmax(masked)", lambda: (nx.softmax(a, -1, np.array([[True, False, True, True], [False, True, True, False], [True, True, True, True]])) * w34).sum(), [a]
    yield "log_softmax", lambda: (nx.log_softmax(a) * w34).sum(), [a]
    yield "layernorm", lambda: (nx.layernorm(a, b, b * 0.5) * w34).sum(), [a, b]
    yield "depthwise_conv1d", lambda: (nx.depthwise_conv1d(seq, kern) * w253).sum(), [seq, kern]
    yield "embedding", lambda: (nx.embedding(table, np.array([1, 4, 4, 0])) * w43).sum(), [table]
    yield "cross_entropy_nll", lambda: nx.cross_entropy_nll(a, np.array([0, 3, 3])), [a]
    yield "sequence_nll", lambda: (nx.sequence_nll(lg, np.array([[1, 2, 0], [4, 0, 0]]), np.array([3, 1])) * np.array([1.0, 3.0])).sum(), [lg]


def desk_model_check(rng):
    vocab = C.build_vocab()
    cfg = M.PRESETS["desk"]
    assert cfg.vocab_size == len(vocab)
    m = M.MultimodalModel(cfg, seed=0)
    for k, p in m.params.items():
        if ".up." in k:  # leave the zero init so down-projection gradients are nonzero
            p.data = rng.normal(0, 0.05, p.data.shape)
    X = rng.normal(size=(6, cfg.frame_dim))
    Y = [20, 60, 90, M.EOS]
    Yp = [20, 61, 90, M.EOS]

    def loss():
        a = nx.cross_entropy_nll(M.forward_s2t(m, X, [M.BOS] + Y[:-1]), Y)
        b = nx.cross_entropy_nll(M.forward_t2t(m, Y, [M.BOS] + Yp[:-1]), Yp)
        return a + b

    params = list(m.params.values())
    err = nx.gradcheck(loss, params, h=1e-5, max_entries=3, rng=rng)
    return err, len(params)


def test_criterion_1_gradients(record):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    worst = {}
    for name, f, inputs in op_battery(rng):
        worst[name] = nx.gradcheck(f, inputs, h=1e-5)
    relu_x = nx.parameter(np.array([-1.0, 0.5, 2.0]))
    worst["relu"] = nx.gradcheck(lambda: (nx.relu(relu_x) * relu_x).sum(), [relu_x])
    op_max = max(worst.values())
    model_err, n_tensors = desk_model_check(rng)
    dt = time.perf_counter() - t0
    ok = op_max <= 1e-4 and model_err <= 1e-4 and dt < 60
    record("1 gradient suite", ok,
           f"{len(worst)} ops max rel err {op_max:.2e}; desk model ({n_tensors} tensors) {model_err:.2e}; {dt:.1f}s")
    assert ok, worst


# 2 -------------------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def desk_corpus():
    vocab = C.build_vocab()
    utts, _ = C.generate_corpus(C.CorpusSpec(), 0, vocab)
    return utts, vocab


def test_criterion_2_gate_identities(record, desk_corpus):
    utts, vocab = desk_corpus
    tr = C.split_of(utts, "train")
    init = M.MultimodalModel(M.PRESETS["desk"], seed=0)

    # (a) exact per-utterance identity, on thresholds straddling each loss
    identity_ok = True
    for u in tr[:12]:
        la, lp = T.loss_asr(init, u).item(), T.loss_par(init, u).item()
        for tau in (-math.inf, 3.2, la - 1e-12, la, math.nextafter(la, math.inf), 3.8, math.inf):
            v, fired = T.loss_amps_tau(init, u, tau)
            identity_ok &= fired == (la > tau) and v.item() == (la + lp if la > tau else la)

    # (b) bitwise trajectories
    sub = tr[:96]
    cfg = dict(epochs=2, batch_size=16, seed=5)

    def traj(**kw):
        return T.fit(init.copy(), sub, T.TrainConfig(**cfg, **kw))

    asr, amps = traj(mode="asr"), traj(mode="amps")
    hi, lo = traj(mode="amps_tau", tau=math.inf), traj(mode="amps_tau", tau=-math.inf)

    def same(r1, r2):
        return (all(np.array_equal(r1.model[k].data, r2.model[k].data) for k in r1.model.params)
                and [s.loss for s in r1.records] == [s.loss for s in r2.records])

    traj_ok = same(asr, hi) and same(amps, lo) and not same(asr, amps)

    # (c) antitone firing sets, on the initial and on a trained model state
    anti_ok = True
    for m in (init, asr.model):
        la = T.batch_asr_losses(m, tr[:200]).data
        taus = np.unique(np.concatenate([la, [-math.inf, 3.2, 3.4, 3.6, 3.8, math.inf]]))
        sets = [set(np.flatnonzero(T.gate("amps_tau", la, t)).tolist()) for t in taus]
        anti_ok &= all(b <= a for a, b in zip(sets, sets[1:]))
    ok = identity_ok and traj_ok and anti_ok
    record("2 gate identities", ok, f"identity={identity_ok} trajectories={traj_ok} antitone={anti_ok}")
    assert ok


# 3 -------------------------------------------------------------------------------------------


def test_criterion_3_wer_oracle(record):
    strings = list(all_strings("abc", 5))
    agree = total = 0
    for ref in strings:
        for hyp in strings:
            total += 1
            agree += E.align(ref, hyp).errors == edit_cost(ref, hyp)
    rng = np.random.default_rng(3)
    dual = 0
    for _ in range(1000):
        r = list(rng.choice(list("abcde"), size=int(rng.integers(0, 12))))
        h = list(rng.choice(list("abcde"), size=int(rng.integers(0, 12))))
        a, b = E.align(r, h), E.align(h, r)
        dual += (a.S, a.I, a.D) == (b.S, b.D, b.I)
    ok = agree == total and dual == 1000
    record("3 WER oracle", ok, f"{agree}/{total} exhaustive pairs agree; duality {dual}/1000")
    assert ok


# 4 -------------------------------------------------------------------------------------------


def test_criterion_4_mapsswe(record):
    d = [2, 0, 1, -1, 2, 1, 0, 1]
    z, p = E.mapsswe(d, [0] * 8)
    hand = abs(z - 2.0494) <= 1e-4 and abs(p - 0.0404) <= 1e-4
    a = [3, 5, 2, 8, 1, 4]
    b = [2, 6, 2, 5, 3, 1]
    z1, p1 = E.mapsswe(a, b)
    z2, p2 = E.mapsswe(b, a)
    sym = z1 == -z2 and p1 == p2
    degen = E.mapsswe(a, a) == (0.0, 1.0) and E.mapsswe([2, 3], [1, 2]) == (math.inf, 0.0)
    ok = hand and sym and degen
    record("4 MAPSSWE", ok, f"Z={z:.4f} p={p:.4f}; symmetry={sym}; degenerate sigma={degen}")
    assert ok


# 5 + 6 ---------------------------------------------------------------------------------------


def run_cli(*args):
    code = cli.main([str(a) for a in args])
    assert code == 0, f"amps-lab {' '.join(map(str, args))} exited {code}"


@pytest.fixture(scope="module")
def experiment(tmp_path_factory):
    root = tmp_path_factory.mktemp("experiment")
    t0 = time.perf_counter()
    per_seed = {}
    for s in SEEDS:
        d = root / f"seed{s}"
        common = ["--config", EXPERIMENT_INI, "--seed", s]
        run_cli("gen", *common, "--out", d / "data")
        run_cli("train", *common, "--data", d / "data", "--mode", "asr", "--out", d / "asr")
        run_cli("train", *common, "--data", d / "data", "--mode", "amps", "--out", d / "amps")
        run_cli("sweep", *common, "--data", d / "data", "--out", d / "sweep")
        sweep = json.loads((d / "sweep" / "sweep.json").read_text())
        tau_ckpt = d / "sweep" / f"tau_{sweep['selected_tau']:g}" / "selected.ckpt"
        run_cli("eval", d / "asr" / "best.ckpt", tau_ckpt, "--name-a", "ASR", "--name-b", "AMPS_TAU",
                *common, "--data", d / "data", "--out", d / "eval_tau")
        run_cli("eval", d / "asr" / "best.ckpt", d / "amps" / "best.ckpt", "--name-a", "ASR", "--name-b", "AMPS",
                *common, "--data", d / "data", "--out", d / "eval_amps")
        run_cli("report", f"ASR={d / 'eval_tau' / 'rows_ASR.jsonl'}", f"AMPS={d / 'eval_amps' / 'rows_AMPS.jsonl'}",
                f"AMPS_TAU={d / 'eval_tau' / 'rows_AMPS_TAU.jsonl'}", "--baseline", "ASR", "--target", "AMPS_TAU",
                "--out", d / "report")
        per_seed[s] = {
            "dir": d,
            "sweep": sweep,
            "tau": json.loads((d / "eval_tau" / "eval_summary.json").read_text()),
            "amps": json.loads((d / "eval_amps" / "eval_summary.json").read_text()),
        }
    return per_seed, time.perf_counter() - t0


@pytest.mark.slow
def test_criterion_5_synthetic_experiment(record, experiment):
    per_seed, elapsed = experiment
    rows = []
    wins = 0
    for s, r in per_seed.items():
        cmp = r["tau"]["comparison"]
        asr, tau = cmp["base_all"]["wer"], cmp["other_all"]["wer"]
        amps = r["amps"]["comparison"]["other_all"]["wer"]
        gain_all, gain_hard = -cmp["delta_all"]["wer"], -cmp["delta_hard"]["wer"]
        wins += gain_hard > gain_all
        rows.append((s, asr, amps, tau, r["sweep"]["selected_tau"], gain_all, gain_hard, cmp["p"]))
        print((r["dir"] / "report" / "table.txt").read_text())
    mean_asr = float(np.mean([x[1] for x in rows]))
    mean_tau = float(np.mean([x[3] for x in rows]))
    for s, asr, amps, tau, sel, ga, gh, p in rows:
        print(f"seed {s}: ASR {asr:.4f} AMPS {amps:.4f} AMPS_TAU(tau={sel:g}) {tau:.4f} "
              f"gain all {ga:+.4f} gain hard {gh:+.4f} mapsswe p={p:.3g}")
    mean_ok = mean_tau <= mean_asr
    hard_ok = wins >= 2
    time_ok = elapsed <= 20 * 60
    ok = mean_ok and hard_ok and time_ok
    record("5 synthetic experiment", ok,
           f"mean test WER ASR {mean_asr:.4f} vs AMPS_TAU {mean_tau:.4f} ({'ok' if mean_ok else 'AMPS_TAU worse'}); "
           f"hard gain > all gain in {wins}/3 seeds; {elapsed / 60:.1f} min")
    assert ok


@pytest.mark.slow
def test_criterion_6_threshold_sweep(record, experiment):
    per_seed, _ = experiment
    ok = True
    for s, r in per_seed.items():
        rows = r["sweep"]["rows"]
        ok &= [x["tau"] for x in rows] == [3.2, 3.4, 3.6, 3.8]
        recomputed = min(rows, key=lambda x: (x["valid_wer"], -x["tau"]))["tau"]
        ok &= recomputed == r["sweep"]["selected_tau"]
        ok &= all(r["sweep"]["rows"][k]["valid_wer"] >= min(x["valid_wer"] for x in rows) for k in range(4))
    # the table's validation WERs are reproducible from the retained checkpoints (seed 0)
    d = per_seed[SEEDS[0]]["dir"]
    utts = C.read_manifest(d / "data" / "corpus.jsonl")
    vocab = C.read_vocab(d / "data" / "vocab.json")
    valid = C.split_of(utts, "valid")
    for row in per_seed[SEEDS[0]]["sweep"]["rows"]:
        m, _, _ = M.load_checkpoint(d / "sweep" / f"tau_{row['tau']:g}" / "selected.ckpt")
        ok &= E.evaluate(m, valid, vocab).all["wer"] == row["valid_wer"]
    sel = {s: r["sweep"]["selected_tau"] for s, r in per_seed.items()}
    record("6 threshold sweep", ok, f"selected tau per seed {sel}; argmin recomputed from sweep.json and checkpoints")
    assert ok


# 7 -------------------------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_7_sequential_ablation(record, tmp_path):
    data = tmp_path / "data"
    run_cli("gen", "--config", EXPERIMENT_INI, "--seed", 0, "--out", data)
    out = tmp_path / "seq"
    run_cli("train", "--config", EXPERIMENT_INI, "--seed", 0, "--data", data, "--mode", "seq-pretrain",
            "--train.phase_order=all", "--epochs", 2, "--out", out)
    rows = json.loads((out / "ablation.json").read_text())
    table = (out / "ablation.txt").read_text()
    print(table)
    orders = [r["order"] for r in rows]
    ok = (orders == ["gt-gt", "para-gt", "gt-para"]
          and all(len(r["phases"]) == 2 and "valid_wer" in r for r in rows)
          and all(o in table for o in orders)
          and all((out / o / "phase2" / "last.ckpt").exists() for o in orders))
    wers = ", ".join(f"{r['order']} {r['valid_wer'] * 100:.2f}%" for r in rows)
    record("7 sequential ablation", ok, f"valid WER {wers} (published context: 42.33 / 47.34 / 43.78)")
    assert ok


# 8 -------------------------------------------------------------------------------------------


def test_criterion_8_paraphrase_pipeline(record, desk_corpus):
    utts, vocab = desk_corpus
    drifts = [C.word_order_drift(u.transcript, u.paraphrase, vocab) for u in utts]
    drift_ok = max(drifts) <= 0.3
    prov = C.LexiconProvider.from_vocab(vocab, mode="nucleus", p=0.95)
    tables = list(prov.forward.values()) + list(prov.backward.values())
    rng = np.random.default_rng(8)
    violations = 0
    for k in range(1000):
        w = tables[k % len(tables)]
        violations += prov.hop(w, rng) not in nucleus_sets(w, prov.p)
    for _ in range(1000):
        n = int(rng.integers(1, 8))
        w = {i: float(x) for i, x in enumerate(rng.dirichlet(np.ones(n) * 0.5))}
        p = float(rng.uniform(0.1, 1.0))
        violations += C._choose(w, "nucleus", 50, p, rng) not in nucleus_sets(w, p)
    prompt = C.render_llm_prompt("example sentence", "Hindi")
    guidelines = [
        "Maintain the original sentence structure and word order as much as possible.",
        "Replace at least one word, and aim to replace as many words as feasible with Hindi synonyms or words with similar meanings.",
        "Do not add extra words or elaborate on the description.",
        "Preserve named entities (e.g., proper names, places) in their original form.",
        "Convert ALL numbers to their Hindi word equivalents. This includes dates, years, percentages, and any other numerical values.",
        "Ensure that all replacements are common Hindi words, avoiding obscure or highly technical terms.",
        "If a direct Hindi synonym is not available, use a phrase that conveys the same meaning.",
        "Maintain the original tense and grammatical structure of the sentence.",
        "If the original sentence contains English words commonly used in Hindi, you may keep them unchanged.",
    ]
    present = sum(g in prompt for g in guidelines)
    ok = drift_ok and violations == 0 and present == 9
    record("8 paraphrase pipeline", ok,
           f"max drift {max(drifts):.3f} over {len(utts)} pairs; nucleus violations {violations}/2000; "
           f"guidelines {present}/9")
    assert ok


# 9 -------------------------------------------------------------------------------------------


class TinyStep:
    """Unbanned step function of a small real model (all V tokens admissible)."""

    def __init__(self, model, X):
        with nx.no_grad():
            self.enc = model.encode_speech(X[None], np.array([X.shape[0]]))
        self.model, self.L = model, X.shape[0]

    def __call__(self, prefixes):
        n = len(prefixes)
        with nx.no_grad():
            enc = nx.tensor(np.repeat(self.enc.data, n, axis=0))
            logits = self.model.decode(enc, np.full(n, self.L), np.asarray(prefixes))
        return nx._log_softmax_np(logits.data[:, -1], -1)


def test_criterion_9_decoding(record):
    rng = np.random.default_rng(9)
    m = M.MultimodalModel(M.PRESETS["desk"], seed=9)
    for k, p in m.params.items():
        if ".up." in k:
            p.data = rng.normal(0, 0.1, p.data.shape)
    same = 0
    for _ in range(100):
        X = rng.normal(size=(int(rng.integers(3, 20)), m.cfg.frame_dim))
        same += E.decode_beam(m, X, 1, 8) == E.decode_greedy(m, X, 8)
    tiny_cfg = M.ModelConfig(d_model=8, adapter_dim=4, n_heads=2, ffn_dim=8, n_speech_layers=1,
                             n_text_enc_layers=1, n_dec_layers=1, vocab_size=4, frame_dim=4)
    agree = 0
    V, L = 4, 3
    for k in range(100):
        tm = M.MultimodalModel(tiny_cfg, seed=k)
        for name, p in tm.params.items():
            p.data = p.data + rng.normal(0, 0.5, p.data.shape)
        step = TinyStep(tm, rng.normal(size=(5, 4)))
        agree += E.beam_search(step, V ** L, L, M.BOS, M.EOS) == best_sequence(step, V, L, M.BOS, M.EOS)
    ok = same == 100 and agree == 100
    record("9 decoding", ok, f"beam(1)==greedy {same}/100; exhaustive beam == brute force {agree}/100")
    assert ok
