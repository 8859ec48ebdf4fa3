"""Command line entry point: ``amps-lab gen|train|sweep|eval|report``.

Configuration comes from an optional INI file with sections ``[corpus]``,
``[model]``, ``[train]``, ``[eval]`` and ``[run]``; any key can be overridden
with ``--section.key=value``. The resolved configuration is written to the
output directory before any work starts.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import logging
import math
import os
import re
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

from . import corpus as C
from . import evaluation as E
from . import model as M
from . import training as T

log = logging.getLogger("amps_lab")

OUT_ENV = "AMPS_LAB_OUT"
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4

MANIFEST = "corpus.jsonl"
VOCAB = "vocab.json"


class CLIConfigError(ValueError):
    pass


class DataError(RuntimeError):
    pass


@dataclass
class EvalOptions:
    method: str = "greedy"
    width: int = 5
    max_len: int = 16
    batch_size: int = 100
    n_hard: int = 100
    split: str = "test"

    def decode_config(self) -> E.DecodeConfig:
        return E.DecodeConfig(self.method, self.width, self.max_len, self.batch_size)

    def validate(self) -> None:
        if self.method not in ("greedy", "beam"):
            raise CLIConfigError(f"unknown decode method {self.method!r}")
        if self.width < 1 or self.max_len < 1 or self.batch_size < 1 or self.n_hard < 1:
            raise CLIConfigError("eval width, max_len, batch_size and n_hard must be >= 1")
        if self.split not in C.SPLITS:
            raise CLIConfigError(f"unknown split {self.split!r}")


@dataclass
class RunOptions:
    seed: int = 0
    preset: str = "desk"
    data: str = ""
    tau_grid: str = ",".join(f"{t:g}" for t in T.DEFAULT_TAU_GRID)


@dataclass
class RunConfig:
    corpus: C.CorpusSpec = field(default_factory=C.CorpusSpec)
    model: M.ModelConfig = field(default_factory=M.ModelConfig)
    train: T.TrainConfig = field(default_factory=T.TrainConfig)
    eval: EvalOptions = field(default_factory=EvalOptions)
    run: RunOptions = field(default_factory=RunOptions)

    SECTIONS = ("corpus", "model", "train", "eval", "run")

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        for sec in self.SECTIONS:
            obj = getattr(self, sec)
            cp[sec] = {f.name: _format(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
        lines = []
        for sec in self.SECTIONS:
            lines.append(f"[{sec}]")
            lines.extend(f"{k} = {v}" for k, v in sorted(cp[sec].items()))
            lines.append("")
        return "\n".join(lines)

    def taus(self) -> list[float]:
        try:
            grid = [float(t) for t in self.run.tau_grid.split(",") if t.strip()]
        except ValueError:
            raise CLIConfigError(f"bad tau grid {self.run.tau_grid!r}") from None
        if not grid:
            raise CLIConfigError("tau grid is empty")
        return grid


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(raw: str, current, key: str):
    raw = raw.strip()
    try:
        if isinstance(current, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
    except ValueError:
        raise CLIConfigError(f"{key}: cannot parse {raw!r} as {type(current).__name__}") from None
    return raw


def apply_overrides(cfg: RunConfig, pairs: Sequence[tuple[str, str, str]]) -> RunConfig:
    """Apply (section, key, raw value) triples, validating names and types."""
    parts = {s: dataclasses.asdict(getattr(cfg, s)) for s in cfg.SECTIONS}
    for sec, key, raw in pairs:
        if sec not in parts:
            raise CLIConfigError(f"unknown config section {sec!r}")
        if key not in parts[sec]:
            raise CLIConfigError(f"unknown key {sec}.{key}")
        parts[sec][key] = _coerce(raw, parts[sec][key], f"{sec}.{key}")
    try:
        return RunConfig(
            C.CorpusSpec(**parts["corpus"]),
            M.ModelConfig(**parts["model"]),
            T.TrainConfig(**parts["train"]),
            EvalOptions(**parts["eval"]),
            RunOptions(**parts["run"]),
        )
    except (ValueError, TypeError) as e:
        raise CLIConfigError(str(e)) from None


def load_ini(path) -> list[tuple[str, str, str]]:
    path = Path(path)
    if not path.exists():
        raise CLIConfigError(f"config file {path} not found")
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read(path, encoding="utf-8")
    except configparser.Error as e:
        raise CLIConfigError(f"{path}: {e}") from None
    return [(sec, k, v) for sec in cp.sections() for k, v in cp[sec].items()]


_OVERRIDE = re.compile(r"^--([a-z_]+)\.([a-z_0-9]+)(?:=(.*))?$")


def split_overrides(argv: Sequence[str]) -> tuple[list[str], list[tuple[str, str, str]]]:
    rest, pairs = [], []
    it = iter(range(len(argv)))
    skip = False
    for k in it:
        if skip:
            skip = False
            continue
        m = _OVERRIDE.match(argv[k])
        if not m:
            rest.append(argv[k])
            continue
        value = m.group(3)
        if value is None:
            if k + 1 >= len(argv):
                raise CLIConfigError(f"{argv[k]} needs a value")
            value, skip = argv[k + 1], True
        pairs.append((m.group(1), m.group(2), value))
    return rest, pairs


def resolve(args: argparse.Namespace, pairs: Sequence[tuple[str, str, str]]) -> RunConfig:
    cfg = RunConfig()
    preset = None
    file_pairs = load_ini(args.config) if args.config else []
    for sec, key, val in list(file_pairs) + list(pairs):
        if (sec, key) == ("run", "preset"):
            preset = val.strip()
    base_model = M.ModelConfig()
    if preset is not None:
        if preset not in M.PRESETS:
            raise CLIConfigError(f"unknown model preset {preset!r}; known: {sorted(M.PRESETS)}")
        base_model = M.PRESETS[preset]
    cfg = replace(cfg, model=base_model)
    flag_pairs = list(pairs)
    if getattr(args, "seed", None) is not None:
        flag_pairs.append(("run", "seed", str(args.seed)))
    if getattr(args, "mode", None):
        flag_pairs.append(("train", "mode", args.mode.replace("-", "_")))
    if getattr(args, "tau", None) is not None:
        flag_pairs.append(("train", "tau", args.tau))
    if getattr(args, "epochs", None) is not None:
        flag_pairs.append(("train", "epochs", str(args.epochs)))
    if getattr(args, "grid", None):
        flag_pairs.append(("run", "tau_grid", args.grid))
    if getattr(args, "data", None):
        flag_pairs.append(("run", "data", args.data))
    cfg = apply_overrides(cfg, file_pairs + flag_pairs)
    cfg = replace(cfg, train=replace(cfg.train, seed=cfg.run.seed))
    try:
        cfg.corpus.validate()
        cfg.eval.validate()
        if cfg.train.mode != "seq_pretrain" or cfg.train.phase_order != "all":
            cfg.train.validate()
    except (C.CorpusError, T.ConfigError) as e:
        raise CLIConfigError(str(e)) from None
    return cfg


def output_dir(args: argparse.Namespace) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get(OUT_ENV, "amps_runs")) / args.command


def echo_config(out: Path, cfg: RunConfig, command: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.ini").write_text(f"# amps-lab {command}\n" + cfg.to_ini(), encoding="utf-8")


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=1, default=_json_default) + "\n", encoding="utf-8")


def _json_default(o):
    if isinstance(o, float) and not math.isfinite(o):
        return str(o)
    raise TypeError(type(o).__name__)


# -- data ------------------------------------------------------------------------------


def load_data(cfg: RunConfig) -> tuple[list[C.Utterance], C.Vocab]:
    if not cfg.run.data:
        raise CLIConfigError("no corpus directory given (use --data DIR or run.data)")
    root = Path(cfg.run.data)
    if not (root / MANIFEST).exists():
        raise DataError(f"manifest {root / MANIFEST} not found (run `amps-lab gen` first)")
    if not (root / VOCAB).exists():
        raise DataError(f"vocabulary {root / VOCAB} not found")
    try:
        utts = C.read_manifest(root / MANIFEST)
        vocab = C.read_vocab(root / VOCAB)
    except C.ManifestError as e:
        raise DataError(str(e)) from None
    except (KeyError, json.JSONDecodeError) as e:
        raise DataError(f"{root}: unreadable data ({e})") from None
    return utts, vocab


def model_config_for(cfg: RunConfig, vocab: C.Vocab, utts) -> M.ModelConfig:
    d = utts[0].frames.shape[1]
    mc = M.with_config(cfg.model, vocab_size=len(vocab), frame_dim=d)
    return mc


def check_compatible(model: M.MultimodalModel, vocab: C.Vocab, utts) -> None:
    d = utts[0].frames.shape[1]
    if model.cfg.vocab_size != len(vocab):
        raise CLIConfigError(f"checkpoint vocab size {model.cfg.vocab_size} != corpus vocab size {len(vocab)}")
    if model.cfg.frame_dim != d:
        raise CLIConfigError(f"checkpoint frame dim {model.cfg.frame_dim} != corpus frame dim {d}")


# -- commands -----------------------------------------------------------------------------


def cmd_gen(args, cfg: RunConfig) -> int:
    out = output_dir(args)
    echo_config(out, cfg, "gen")
    vocab = C.build_vocab(cfg.corpus.n_topics, cfg.corpus.vocab_seed)
    utts, summary = C.generate_corpus(cfg.corpus, cfg.run.seed, vocab, frame_dim=cfg.model.frame_dim)
    C.write_manifest(out / MANIFEST, utts)
    C.write_vocab(out / VOCAB, vocab)
    write_json(out / "gen_summary.json", summary.to_dict())
    fr = summary.spontaneous_fraction
    print(f"wrote {summary.n_utterances} utterances to {out / MANIFEST}")
    print("spontaneous fraction: " + ", ".join(f"{k}={v:.3f}" for k, v in fr.items()))
    print(f"drift-filter rejections: {summary.drift_rejections} (fallbacks to transcript: {summary.paraphrase_fallbacks})")
    return EXIT_OK


def _splits(utts):
    return C.split_of(utts, "train"), C.split_of(utts, "valid"), C.split_of(utts, "test")


def cmd_train(args, cfg: RunConfig) -> int:
    utts, vocab = load_data(cfg)
    tr, va, _ = _splits(utts)
    out = output_dir(args)
    mc = model_config_for(cfg, vocab, utts)
    tcfg = cfg.train
    if tcfg.mode == "seq_pretrain":
        return _train_sequential(out, cfg, mc, tr, va, vocab)
    try:
        T.validate_corpus(tr, tcfg)
    except T.ConfigError as e:
        raise DataError(str(e)) from None
    echo_config(out, replace(cfg, model=mc), "train")
    dcfg = cfg.eval.decode_config()
    last = out / "last.ckpt"
    if args.resume and last.exists():
        res = T.resume(last, tr, tcfg, valid=va, vocab=vocab, log_path=out / "steps.jsonl",
                       ckpt_dir=out, decode_cfg=dcfg)
    else:
        (out / "steps.jsonl").write_text("")
        model = M.MultimodalModel(mc, seed=cfg.run.seed)
        res = T.fit(model, tr, tcfg, valid=va, vocab=vocab, log_path=out / "steps.jsonl",
                    ckpt_dir=out, decode_cfg=dcfg)
    meta = {"train_config": dataclasses.asdict(tcfg), "epochs": tcfg.epochs, "best_epoch": res.best_epoch}
    M.save_checkpoint(out / "final.ckpt", res.model, None, meta)
    fired = [f for r in res.records for f in r.gate_fired]
    summary = {
        "mode": tcfg.mode, "tau": tcfg.tau, "epochs": tcfg.epochs,
        "valid_wer": res.valid_wer, "best_epoch": res.best_epoch,
        "epoch_loss": res.epoch_losses(),
        "gate_fire_rate": sum(fired) / len(fired) if fired else None,
    }
    write_json(out / "train_summary.json", summary)
    print(f"trained {tcfg.mode} for {tcfg.epochs} epochs; checkpoints in {out}")
    if res.valid_wer:
        print(f"best valid WER {min(res.valid_wer) * 100:.2f}% at epoch {res.best_epoch}")
    return EXIT_OK


def _train_sequential(out: Path, cfg: RunConfig, mc, tr, va, vocab) -> int:
    orders = list(T.PHASE_ORDERS) if cfg.train.phase_order == "all" else [cfg.train.phase_order]
    if any(not u.paraphrase for u in tr) and any("paraphrase" in T.PHASE_ORDERS[o] for o in orders):
        raise DataError("paraphrase phases need paraphrases for every training utterance")
    echo_config(out, replace(cfg, model=mc), "train")
    init = M.MultimodalModel(mc, seed=cfg.run.seed)
    rows = T.phase_ablation(init, tr, replace(cfg.train, phase_order=orders[0]), orders, va, vocab,
                            cfg.eval.decode_config(), ckpt_dir=out)
    write_json(out / "ablation.json", rows)
    print(T.render_ablation(rows))
    (out / "ablation.txt").write_text(T.render_ablation(rows) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_sweep(args, cfg: RunConfig) -> int:
    utts, vocab = load_data(cfg)
    tr, va, _ = _splits(utts)
    taus = cfg.taus()
    if not va:
        raise DataError("the corpus has no validation split")
    try:
        T.validate_corpus(tr, replace(cfg.train, mode="amps_tau"))
    except T.ConfigError as e:
        raise DataError(str(e)) from None
    out = output_dir(args)
    mc = model_config_for(cfg, vocab, utts)
    echo_config(out, replace(cfg, model=mc), "sweep")
    init = M.MultimodalModel(mc, seed=cfg.run.seed)
    rep = T.sweep_tau(init, tr, taus, cfg.train, va, vocab, cfg.eval.decode_config(), out_dir=out)
    for tau, res in rep.results.items():
        M.save_checkpoint(out / f"tau_{tau:g}" / "selected.ckpt", res.best_model(), None, {"tau": tau})
    write_json(out / "sweep.json", rep.to_dict())
    E.write_curve_csv(out / "sweep.csv", ["tau", "valid_wer", "fire_rate"],
                      [[r["tau"], r["valid_wer"], r["fire_rate"]] for r in rep.rows])
    for r in rep.rows:
        print(f"tau={r['tau']:<5g} valid WER {r['valid_wer'] * 100:6.2f}%  gate fire rate {r['fire_rate']:.3f}")
    print(f"selected tau = {rep.selected_tau:g}")
    return EXIT_OK


def _load_ckpt(path) -> M.MultimodalModel:
    p = Path(path)
    if not p.exists():
        raise DataError(f"checkpoint {p} not found")
    try:
        return M.load_checkpoint(p)[0]
    except (ValueError, KeyError) as e:
        raise DataError(f"{p}: {e}") from None


def cmd_eval(args, cfg: RunConfig) -> int:
    utts, vocab = load_data(cfg)
    split = C.split_of(utts, cfg.eval.split)
    if not split:
        raise DataError(f"split {cfg.eval.split!r} is empty")
    models = {args.name_a: _load_ckpt(args.ckpt)}
    if args.ckpt_b:
        if args.name_b == args.name_a:
            raise CLIConfigError("the two systems need distinct names")
        models[args.name_b] = _load_ckpt(args.ckpt_b)
    for m in models.values():
        check_compatible(m, vocab, utts)
    out = output_dir(args)
    echo_config(out, cfg, "eval")
    dcfg = cfg.eval.decode_config()
    reports = {}
    for name, m in models.items():
        rep = E.evaluate(m, split, vocab, dcfg, {"system": name, "split": cfg.eval.split})
        rep.write_jsonl(out / f"rows_{name}.jsonl")
        reports[name] = rep
    summary = {name: r.summary() for name, r in reports.items()}
    if args.ckpt_b:
        cmp = E.hard_subset_report(reports[args.name_a].rows, reports[args.name_b].rows, cfg.eval.n_hard)
        d = cmp.to_dict()
        d["significant"] = cmp.significant
        summary["comparison"] = d
        table = E.render_table(reports, args.name_a, args.name_b, cfg.eval.n_hard)
    else:
        table = E.render_table(reports)
    write_json(out / "eval_summary.json", summary)
    (out / "table.txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    return EXIT_OK


def _rows_from_jsonl(path) -> list[E.UttRow]:
    p = Path(path)
    if not p.exists():
        raise DataError(f"row file {p} not found")
    rows = []
    with open(p, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                try:
                    rows.append(E.UttRow(**json.loads(line)))
                except (json.JSONDecodeError, TypeError) as e:
                    raise DataError(f"{p}:{lineno}: bad row ({e})") from None
    return sorted(rows, key=lambda r: r.id)


def cmd_report(args, cfg: RunConfig) -> int:
    systems = {}
    for spec in args.systems:
        if "=" not in spec:
            raise CLIConfigError(f"expected NAME=ROWS.jsonl, got {spec!r}")
        name, path = spec.split("=", 1)
        rows = _rows_from_jsonl(path)
        kinds = sorted({r.kind for r in rows})
        systems[name] = E.EvalReport(rows, E.aggregate(rows),
                                     {k: E.aggregate([r for r in rows if r.kind == k]) for k in kinds})
    for name in (args.baseline, args.target):
        if name and name not in systems:
            raise CLIConfigError(f"unknown system {name!r}")
    if args.baseline and args.target:
        ids = {n: {r.id for r in s.rows} for n, s in systems.items()}
        if ids[args.baseline] != ids[args.target]:
            raise DataError("baseline and target were scored on different utterances")
    out = output_dir(args)
    echo_config(out, cfg, "report")
    table = E.render_table(systems, args.baseline, args.target, cfg.eval.n_hard)
    (out / "table.txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "sweep": cmd_sweep, "eval": cmd_eval, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with [corpus] [model] [train] [eval] [run] sections")
    common.add_argument("--out", help=f"output directory (default ${OUT_ENV}/<command>)")
    common.add_argument("--seed", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="amps-lab", description="Paraphrase-supervised ASR experiments at desk scale. "
                                "Any config key can be set with --section.key=value.")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("gen", parents=[common], help="generate a synthetic corpus")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--data", help="directory written by `gen`")

    t = sub.add_parser("train", parents=[common, data], help="train one model")
    t.add_argument("--mode", choices=["asr", "amps", "amps-tau", "weighted", "seq-pretrain",
                                      "amps_tau", "seq_pretrain"])
    t.add_argument("--tau", help="gate threshold (accepts inf / -inf)")
    t.add_argument("--epochs", type=int)
    t.add_argument("--resume", action="store_true", help="continue from last.ckpt in the output directory")

    s = sub.add_parser("sweep", parents=[common, data], help="train AMPS_TAU over a tau grid")
    s.add_argument("--grid", help="comma-separated thresholds")
    s.add_argument("--epochs", type=int)

    e = sub.add_parser("eval", parents=[common, data], help="decode and score one or two checkpoints")
    e.add_argument("ckpt")
    e.add_argument("ckpt_b", nargs="?")
    e.add_argument("--name-a", default="A")
    e.add_argument("--name-b", default="B")

    r = sub.add_parser("report", parents=[common], help="render a table from saved row files")
    r.add_argument("systems", nargs="+", metavar="NAME=ROWS.jsonl")
    r.add_argument("--baseline")
    r.add_argument("--target")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        rest, pairs = split_overrides(argv)
    except CLIConfigError as e:
        print(f"amps-lab: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        args = parser.parse_args(rest)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args, pairs)
        return COMMANDS[args.command](args, cfg)
    except (CLIConfigError, T.ConfigError, C.CorpusError) as e:
        print(f"amps-lab: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, C.ManifestError) as e:
        print(f"amps-lab: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except KeyboardInterrupt:
        print("amps-lab: interrupted", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as e:  # noqa: BLE001 - top-level boundary
        log.debug("failure", exc_info=True)
        print(f"amps-lab: runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
