"""ASR / AMPS / AMPS-tau objectives, Adam, and the training loops.

Losses are per-token mean negative log-likelihoods (minimised). The
paraphrase term is gated per utterance on the detached ASR loss of the same
forward pass:

    L = L_asr + L_par   if L_asr > tau
    L = L_asr           otherwise

Data order comes from a stream seeded by (seed, epoch) only, so gating never
perturbs shuffling; AMPS_TAU with tau=+inf retraces ASR bit for bit, and with
tau=-inf it retraces AMPS.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import numerics as nx
from .model import (BOS, MultimodalModel, forward_s2t, forward_t2t, is_text_encoder,
                    load_checkpoint, pad_frames, pad_ids, save_checkpoint)

log = logging.getLogger(__name__)

MODES = ("asr", "amps", "amps_tau", "weighted", "seq_pretrain")
DEFAULT_TAU_GRID = (3.2, 3.4, 3.6, 3.8)


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    mode: str = "asr"
    tau: float = 3.6
    weight_lo: float = 0.5
    weight_hi: float = 2.0
    epochs: int = 6
    batch_size: int = 16
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    adapter_only: bool = False
    update_text_encoder: bool = True
    gate_granularity: str = "utterance"
    s2t_target: str = "transcript"  # transcript | paraphrase
    phase_order: str = "gt-gt"  # seq_pretrain only: gt-gt | para-gt | gt-para

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.mode == "amps_tau" and (self.tau is None or math.isnan(self.tau)):
            raise ConfigError("amps_tau needs a threshold tau")
        if self.mode == "weighted" and not math.isfinite(self.tau):
            raise ConfigError("weighted mode needs a finite tau for its weight function")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.gate_granularity != "utterance":
            raise ConfigError("only per-utterance gating is supported")
        if self.s2t_target not in ("transcript", "paraphrase"):
            raise ConfigError(f"unknown s2t_target {self.s2t_target!r}")
        if self.phase_order not in PHASE_ORDERS:
            raise ConfigError(f"unknown phase_order {self.phase_order!r}")
        if not 0 < self.weight_lo <= self.weight_hi:
            raise ConfigError("need 0 < weight_lo <= weight_hi")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


PAPER_TRAIN = TrainConfig(mode="amps_tau", epochs=20, batch_size=8, learning_rate=5e-6, adapter_only=True)

PHASE_ORDERS = {
    "gt-gt": ("transcript", "transcript"),
    "para-gt": ("paraphrase", "transcript"),
    "gt-para": ("transcript", "paraphrase"),
}


@dataclass
class StepRecord:
    epoch: int
    step: int
    ids: list[str]
    l_asr: list[float]
    l_par: list[float | None]
    gate_fired: list[bool]
    loss: float
    phase: str = ""

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


# -- single-utterance objectives --------------------------------------------------------


def _teacher(seq: Sequence[int]) -> tuple[list[int], list[int]]:
    seq = [int(t) for t in seq]
    return [BOS] + seq[:-1], seq


def loss_asr(model: MultimodalModel, utt, target: str = "transcript") -> nx.Tensor:
    Y = utt.transcript if target == "transcript" else utt.paraphrase
    if not Y:
        raise ValueError(f"utterance {utt.id} has an empty {target}")
    y_in, y_out = _teacher(Y)
    return nx.cross_entropy_nll(forward_s2t(model, utt.frames, y_in), y_out, "mean")


def loss_par(model: MultimodalModel, utt) -> nx.Tensor:
    if not utt.paraphrase:
        raise ValueError(f"utterance {utt.id} has no paraphrase")
    y_in, y_out = _teacher(utt.paraphrase)
    return nx.cross_entropy_nll(forward_t2t(model, utt.transcript, y_in), y_out, "mean")


def loss_amps(model: MultimodalModel, utt) -> nx.Tensor:
    return loss_asr(model, utt) + loss_par(model, utt)


def loss_amps_tau(model: MultimodalModel, utt, tau: float) -> tuple[nx.Tensor, bool]:
    if math.isnan(tau):
        raise ValueError("tau must not be NaN")
    la = loss_asr(model, utt)
    fired = la.item() > tau
    if fired:
        return la + loss_par(model, utt), True
    return la, False


def clamp_weight(tau: float, lo: float = 0.5, hi: float = 2.0) -> Callable[[float], float]:
    """w(L) = clamp(L / tau, lo, hi): down-weights easy and up-weights hard utterances."""
    def w(loss_value: float) -> float:
        return min(hi, max(lo, loss_value / tau))

    return w


def loss_weighted(model: MultimodalModel, utt, weight_fn: Callable[[float], float]) -> nx.Tensor:
    la = loss_asr(model, utt)
    w = float(weight_fn(la.item()))
    if not w > 0:
        raise ValueError(f"weight function returned nonpositive weight {w}")
    return la * w


# -- optimiser ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def optimizer_step(params: dict[str, nx.Tensor], grads: dict[str, np.ndarray], state: AdamState,
                   cfg: TrainConfig) -> None:
    """One in-place Adam update of ``params``."""
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise nx.ShapeError(f"gradient shape {g.shape} != parameter shape {p.data.shape} for {name}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.eps)


def adam_arrays(state: AdamState) -> dict[str, np.ndarray]:
    out = {f"adam.m/{k}": v for k, v in state.m.items()}
    out.update({f"adam.v/{k}": v for k, v in state.v.items()})
    return out


def adam_from_arrays(arrays: dict[str, np.ndarray], t: int) -> AdamState:
    st = AdamState(t=t)
    for k, v in arrays.items():
        if k.startswith("adam.m/"):
            st.m[k[7:]] = v.copy()
        elif k.startswith("adam.v/"):
            st.v[k[7:]] = v.copy()
    return st


# -- batched training ----------------------------------------------------------------------


def epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    """Shuffling stream; a function of (seed, epoch) only."""
    return np.random.default_rng([seed, 7, epoch]).permutation(n)


def optimised_parameters(model: MultimodalModel, cfg: TrainConfig) -> dict[str, nx.Tensor]:
    params = model.trainable_parameters(cfg.adapter_only or model.cfg.adapter_only_training)
    if not cfg.update_text_encoder:
        params = {k: v for k, v in params.items() if not is_text_encoder(k)}
    return params


def batch_asr_losses(model: MultimodalModel, batch, target: str = "transcript") -> nx.Tensor:
    """(B,) per-utterance mean NLL through the speech route."""
    seqs = [u.transcript if target == "transcript" else u.paraphrase for u in batch]
    if any(not s for s in seqs):
        raise ValueError(f"batch contains an utterance without a {target}")
    F, flens = pad_frames([u.frames for u in batch])
    y_in, _ = pad_ids([_teacher(s)[0] for s in seqs])
    y_out, ylens = pad_ids(seqs)
    return nx.sequence_nll(model.s2t_batch(F, flens, y_in), y_out, ylens)


def batch_par_losses(model: MultimodalModel, batch) -> nx.Tensor:
    """(B,) per-utterance mean NLL of the paraphrase through the text route."""
    if any(not u.paraphrase for u in batch):
        raise ValueError("batch contains an utterance without a paraphrase")
    src, slens = pad_ids([u.transcript for u in batch])
    y_in, _ = pad_ids([_teacher(u.paraphrase)[0] for u in batch])
    y_out, ylens = pad_ids([u.paraphrase for u in batch])
    return nx.sequence_nll(model.t2t_batch(src, slens, y_in), y_out, ylens)


def gate(mode: str, l_asr: np.ndarray, tau: float) -> np.ndarray:
    if mode == "amps":
        return np.ones(l_asr.shape, dtype=bool)
    if mode == "amps_tau":
        return l_asr > tau
    return np.zeros(l_asr.shape, dtype=bool)


def train_step(model: MultimodalModel, batch, cfg: TrainConfig, params: dict[str, nx.Tensor],
               state: AdamState) -> tuple[float, np.ndarray, np.ndarray, list]:
    model.zero_grad()
    la = batch_asr_losses(model, batch, cfg.s2t_target)
    vals = la.data.copy()
    fired = gate(cfg.mode, vals, cfg.tau)
    if cfg.mode == "weighted":
        wf = clamp_weight(cfg.tau, cfg.weight_lo, cfg.weight_hi)
        total = (la * np.array([wf(float(v)) for v in vals])).sum()
    else:
        total = la.sum()
    par: list = [None] * len(batch)
    if fired.any():
        idx = np.flatnonzero(fired)
        lp = batch_par_losses(model, [batch[i] for i in idx])
        total = total + lp.sum()
        for k, i in enumerate(idx):
            par[i] = float(lp.data[k])
    loss = total * (1.0 / len(batch))
    nx.backward(loss)
    optimizer_step(params, {k: p.grad for k, p in params.items()}, state, cfg)
    return loss.item(), vals, fired, par


@dataclass
class TrainResult:
    model: MultimodalModel
    records: list[StepRecord]
    optimizer: AdamState
    epochs_done: int
    valid_wer: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_state: dict[str, np.ndarray] | None = None

    def best_model(self) -> MultimodalModel:
        if self.best_state is None:
            return self.model
        m = self.model.copy()
        m.load_state_dict(self.best_state)
        return m

    def epoch_losses(self) -> list[float]:
        by: dict[int, list[float]] = {}
        for r in self.records:
            by.setdefault(r.epoch, []).append(r.loss)
        return [float(np.mean(by[e])) for e in sorted(by)]


def validate_corpus(corpus, cfg: TrainConfig) -> None:
    if not corpus:
        raise ConfigError("training corpus is empty")
    needs_par = cfg.mode in ("amps", "amps_tau") or cfg.s2t_target == "paraphrase" or (
        cfg.mode == "seq_pretrain" and "paraphrase" in PHASE_ORDERS[cfg.phase_order])
    if needs_par and any(not u.paraphrase for u in corpus):
        raise ConfigError(f"mode {cfg.mode} needs paraphrases for every training utterance")


def fit(
    model: MultimodalModel,
    corpus,
    cfg: TrainConfig,
    valid=None,
    vocab=None,
    log_path=None,
    ckpt_dir=None,
    start_epoch: int = 0,
    optimizer: AdamState | None = None,
    phase: str = "",
    best: tuple[float, int, dict | None] | None = None,
    decode_cfg=None,
) -> TrainResult:
    """Train in place for epochs ``start_epoch .. cfg.epochs - 1``.

    With ``valid`` and ``vocab`` the greedy validation WER is computed after
    every epoch and the best parameters are kept. With ``ckpt_dir``,
    ``last.ckpt`` (and ``best.ckpt``) are written after every epoch so a run
    can resume with identical results.
    """
    cfg.validate()
    validate_corpus(corpus, cfg)
    corpus = list(corpus)
    params = optimised_parameters(model, cfg)
    state = optimizer or AdamState()
    records: list[StepRecord] = []
    best_wer, best_epoch, best_state = best if best is not None else (math.inf, -1, None)
    valid_wers: list[float] = []
    if ckpt_dir is not None:
        Path(ckpt_dir).mkdir(parents=True, exist_ok=True)
    log_fh = open(log_path, "a", encoding="utf-8") if log_path else None
    n = len(corpus)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    try:
        for epoch in range(start_epoch, cfg.epochs):
            order = epoch_order(cfg.seed, epoch, n)
            for s in range(steps_per_epoch):
                batch = [corpus[i] for i in order[s * cfg.batch_size:(s + 1) * cfg.batch_size]]
                loss, la, fired, par = train_step(model, batch, cfg, params, state)
                rec = StepRecord(epoch, epoch * steps_per_epoch + s, [u.id for u in batch],
                                 [float(x) for x in la], par, [bool(f) for f in fired], loss, phase)
                records.append(rec)
                if log_fh:
                    log_fh.write(rec.to_json() + "\n")
            if valid is not None and vocab is not None:
                from .evaluation import evaluate

                w = evaluate(model, valid, vocab, decode_cfg).all["wer"]
                valid_wers.append(w)
                if w < best_wer:
                    best_wer, best_epoch = w, epoch
                    best_state = {k: v.data.copy() for k, v in model.params.items()}
                log.info("epoch %d valid WER %.4f", epoch, w)
            if ckpt_dir is not None:
                meta = {"epoch": epoch + 1, "adam_t": state.t, "train_config": asdict(cfg),
                        "best_valid_wer": best_wer if math.isfinite(best_wer) else None,
                        "best_epoch": best_epoch, "phase": phase}
                save_checkpoint(Path(ckpt_dir) / "last.ckpt", model, adam_arrays(state), meta)
                if best_epoch == epoch:
                    save_checkpoint(Path(ckpt_dir) / "best.ckpt", model, adam_arrays(state), meta)
    finally:
        if log_fh:
            log_fh.close()
    return TrainResult(model, records, state, cfg.epochs, valid_wers, best_epoch, best_state)


def train(model: MultimodalModel, corpus, cfg: TrainConfig, **kwargs) -> tuple[MultimodalModel, list[StepRecord]]:
    res = fit(model, corpus, cfg, **kwargs)
    return res.model, res.records


def resume(ckpt_path, corpus, cfg: TrainConfig, **kwargs) -> TrainResult:
    """Continue a run from ``last.ckpt`` up to ``cfg.epochs``."""
    model, extras, meta = load_checkpoint(ckpt_path)
    state = adam_from_arrays(extras, meta["adam_t"])
    best = None
    if meta.get("best_valid_wer") is not None:
        best_path = Path(ckpt_path).with_name("best.ckpt")
        best_state = load_checkpoint(best_path)[0].state_dict() if best_path.exists() else None
        best = (meta["best_valid_wer"], meta["best_epoch"], best_state)
    return fit(model, corpus, cfg, start_epoch=meta["epoch"], optimizer=state, best=best, **kwargs)


# -- sequential pretraining ablation ----------------------------------------------------------


@dataclass
class SequentialReport:
    order: str
    phases: list[dict]

    def to_dict(self) -> dict:
        return asdict(self)


def train_sequential(
    model: MultimodalModel,
    corpus,
    cfg: TrainConfig,
    phase_epochs: tuple[int, int] | None = None,
    ckpt_dir=None,
    valid=None,
    vocab=None,
    decode_cfg=None,
) -> tuple[MultimodalModel, SequentialReport]:
    """Two speech-route phases with different targets (ASR objective only).

    Shuffling keeps counting epochs across the boundary and the optimiser
    state carries over, so gt-gt with (e, e) equals one 2e-epoch run.
    """
    if cfg.mode != "seq_pretrain":
        raise ConfigError("train_sequential needs mode 'seq_pretrain'")
    cfg.validate()
    e1, e2 = phase_epochs or (cfg.epochs, cfg.epochs)
    targets = PHASE_ORDERS[cfg.phase_order]
    state, start, phases = AdamState(), 0, []
    for k, (target, e) in enumerate(zip(targets, (e1, e2))):
        pcfg = replace(cfg, mode="asr", s2t_target=target, epochs=start + e)
        pdir = None
        if ckpt_dir is not None:
            pdir = Path(ckpt_dir) / f"phase{k + 1}"
            pdir.mkdir(parents=True, exist_ok=True)
        res = fit(model, corpus, pcfg, start_epoch=start, optimizer=state, ckpt_dir=pdir,
                  phase=f"phase{k + 1}:{target}", valid=valid, vocab=vocab, decode_cfg=decode_cfg)
        state = res.optimizer
        phases.append({"phase": k + 1, "target": target, "epochs": e,
                       "mean_loss": res.epoch_losses(), "valid_wer": res.valid_wer})
        start += e
    return model, SequentialReport(cfg.phase_order, phases)


# -- threshold sweep -----------------------------------------------------------------------------


@dataclass
class SweepReport:
    rows: list[dict]
    selected_tau: float
    results: dict = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {"rows": self.rows, "selected_tau": self.selected_tau}


def select_tau(rows: Sequence[dict]) -> float:
    """argmin validation WER; ties go to the larger tau (gate fires less)."""
    best = min(rows, key=lambda r: (r["valid_wer"], -r["tau"]))
    return best["tau"]


def sweep_tau(
    model_init: MultimodalModel,
    corpus,
    taus: Sequence[float],
    cfg: TrainConfig,
    valid,
    vocab,
    decode_cfg=None,
    out_dir=None,
    use_best: bool = True,
) -> SweepReport:
    """Train one AMPS_TAU model per threshold from the same initial weights."""
    if not taus:
        raise ConfigError("tau grid is empty")
    if not valid:
        raise ConfigError("a validation split is required for the sweep")
    from .evaluation import evaluate

    rows, results = [], {}
    for tau in taus:
        tcfg = replace(cfg, mode="amps_tau", tau=float(tau))
        tdir = None
        if out_dir is not None:
            tdir = Path(out_dir) / f"tau_{tau:g}"
            tdir.mkdir(parents=True, exist_ok=True)
        res = fit(model_init.copy(), corpus, tcfg, valid=valid, vocab=vocab, ckpt_dir=tdir,
                  decode_cfg=decode_cfg,
                  log_path=None if tdir is None else tdir / "steps.jsonl")
        final = res.best_model() if use_best else res.model
        w = evaluate(final, valid, vocab, decode_cfg).all["wer"]
        fired = sum(sum(r.gate_fired) for r in res.records)
        total = sum(len(r.gate_fired) for r in res.records)
        rows.append({"tau": float(tau), "valid_wer": w, "fire_rate": fired / total if total else 0.0})
        results[float(tau)] = res
    return SweepReport(rows, select_tau(rows), results)


def write_records(path, records: Sequence[StepRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")


def phase_ablation(
    model_init: MultimodalModel,
    corpus,
    cfg: TrainConfig,
    orders: Sequence[str] = tuple(PHASE_ORDERS),
    valid=None,
    vocab=None,
    decode_cfg=None,
    ckpt_dir=None,
) -> list[dict]:
    """Run ``train_sequential`` for each phase order from the same initial weights."""
    from .evaluation import evaluate

    rows = []
    for order in orders:
        ocfg = replace(cfg, mode="seq_pretrain", phase_order=order)
        odir = None
        if ckpt_dir is not None:
            odir = Path(ckpt_dir) / order
            odir.mkdir(parents=True, exist_ok=True)
        m, rep = train_sequential(model_init.copy(), corpus, ocfg, ckpt_dir=odir)
        row = {"order": order, "phases": rep.phases}
        if valid is not None and vocab is not None:
            row["valid_wer"] = evaluate(m, valid, vocab, decode_cfg).all["wer"]
        rows.append(row)
    return rows


# Reference WERs for the three orders from the original large-scale study; context only.
PUBLISHED_ABLATION = {"gt-gt": 42.33, "para-gt": 47.34, "gt-para": 43.78}


def render_ablation(rows: Sequence[dict]) -> str:
    lines = ["order    | final loss | valid WER (%) | published WER (%)",
             "---------+------------+---------------+------------------"]
    for r in rows:
        loss = r["phases"][-1]["mean_loss"]
        loss_s = f"{loss[-1]:.4f}" if loss else "-"
        w = r.get("valid_wer")
        w_s = f"{w * 100:.2f}" if w is not None else "-"
        lines.append(f"{r['order']:<8} | {loss_s:>10} | {w_s:>13} | {PUBLISHED_ABLATION[r['order']]:>17.2f}")
    return "\n".join(lines)
