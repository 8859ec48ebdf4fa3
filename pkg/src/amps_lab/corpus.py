"""Synthetic read/spontaneous speech corpus and paraphrase generation.

Real speech and translation models are replaced by a small pseudo-language:
content words come in synonym classes grouped by topic, transcripts are drawn
from a template grammar, and "audio" is a sequence of noisy per-token
prototype frames. Spontaneous utterances are noisier and additionally lose
frames and gain filler frames.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from . import kernels
from .model import BOS, EOS, PAD, UNK

log = logging.getLogger(__name__)

SPECIALS = ["<pad>", "<s>", "</s>", "<unk>"]
READ, SPONTANEOUS = "READ", "SPONTANEOUS"
SPLITS = ("train", "valid", "test")

FUNCTION_WORDS = {
    "DET": ["the", "a"],
    "PREP": ["in", "on", "with", "at", "for", "to"],
    "PRON": ["we", "they", "he", "she"],
    "IS": ["is"],
    "VERY": ["very"],
    "AND": ["and"],
    "NOT": ["not"],
}

TEMPLATES = [
    ("DET", "ADJ", "NOUN", "VERB", "DET", "NOUN"),
    ("DET", "NOUN", "VERB", "PREP", "DET", "ADJ", "NOUN"),
    ("PRON", "VERB", "DET", "ADJ", "NOUN"),
    ("DET", "NOUN", "IS", "VERY", "ADJ"),
    ("DET", "NOUN", "AND", "DET", "NOUN", "VERB"),
    ("PRON", "NOT", "VERB", "DET", "NOUN", "PREP", "DET", "NOUN"),
]

# synonym-class sizes per topic and category
CLASS_SIZES = {"NOUN": (3, 3, 2, 2, 1, 1), "VERB": (3, 2, 2, 2, 1), "ADJ": (3, 2, 2, 1)}
SUFFIXES = ("ta", "ni")
SYLLABLES = [c + v for c in "bdfgklmnprsvz" for v in "aeiou"]


class CorpusError(ValueError):
    pass


class ManifestError(ValueError):
    pass


def _stable_seed(*parts) -> int:
    h = hashlib.sha256("\x1f".join(map(str, parts)).encode("utf-8")).digest()
    return int.from_bytes(h[:8], "little")


def stem(word: str) -> str:
    for suf in SUFFIXES:
        if word.endswith(suf) and len(word) > len(suf) + 2:
            return word[: -len(suf)]
    return word


@dataclass
class Vocab:
    """Surface forms, synonym classes and grammar tags for the pseudo-language.

    ``classes[i]`` is the synonym-class id of word i (-1 for specials and
    function words); ``category``/``topic`` drive the template grammar.
    """

    words: list[str]
    classes: list[int]
    category: list[str]
    topic: list[int]
    syllables: dict[str, list[str]] = field(default_factory=dict)

    def __post_init__(self):
        self.index = {w: i for i, w in enumerate(self.words)}
        if len(self.index) != len(self.words):
            raise CorpusError("duplicate surface forms in vocabulary")
        members: dict[int, list[int]] = {}
        for i, c in enumerate(self.classes):
            if c >= 0:
                members.setdefault(c, []).append(i)
        self.class_members = members

    def __len__(self) -> int:
        return len(self.words)

    def is_content(self, i: int) -> bool:
        return self.classes[i] >= 0

    def synonyms(self, i: int) -> list[int]:
        c = self.classes[i]
        return [i] if c < 0 else self.class_members[c]

    def class_key(self, i: int) -> int:
        """Token id collapsed to its synonym class (negative keys for non-content)."""
        c = self.classes[i]
        return c if c >= 0 else -1 - i

    def encode(self, words: Sequence[str]) -> list[int]:
        return [self.index.get(w, UNK) for w in words]

    def decode(self, ids: Sequence[int], strip: bool = True) -> list[str]:
        out = []
        for i in ids:
            i = int(i)
            if strip and i in (PAD, BOS):
                continue
            if strip and i == EOS:
                break
            out.append(self.words[i])
        return out

    def to_dict(self) -> dict:
        return {"words": self.words, "classes": self.classes, "category": self.category,
                "topic": self.topic, "syllables": self.syllables}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocab":
        return cls(d["words"], d["classes"], d["category"], d["topic"], d.get("syllables", {}))


def build_vocab(n_topics: int = 6, seed: int = 1234) -> Vocab:
    """Deterministic pseudo-language. The default gives V = 200."""
    rng = np.random.default_rng(seed)
    words, classes, cats, topics = list(SPECIALS), [-1] * 4, ["SPECIAL"] * 4, [-1] * 4
    sylls: dict[str, list[str]] = {}
    for cat, ws in FUNCTION_WORDS.items():
        for w in ws:
            words.append(w)
            classes.append(-1)
            cats.append(cat)
            topics.append(-1)
            sylls[w] = [w]
    used = set(words)
    cid = 0

    def fresh(n_syll: int) -> list[str]:
        while True:
            parts = [SYLLABLES[k] for k in rng.integers(0, len(SYLLABLES), size=n_syll)]
            w = "".join(parts)
            if w not in used and stem(w) == w:
                used.add(w)
                return parts

    for t in range(n_topics):
        for cat, sizes in CLASS_SIZES.items():
            for size in sizes:
                base = fresh(int(rng.integers(2, 4)))
                members = [base]
                for k in range(1, size):
                    # second member of larger classes is an inflected variant
                    if k == 1 and size >= 3:
                        w = "".join(base) + SUFFIXES[int(rng.integers(0, len(SUFFIXES)))]
                        if w not in used:
                            used.add(w)
                            members.append(base + [w[len("".join(base)):]])
                            continue
                    members.append(fresh(int(rng.integers(2, 4))))
                for parts in members:
                    w = "".join(parts)
                    words.append(w)
                    classes.append(cid)
                    cats.append(cat)
                    topics.append(t)
                    sylls[w] = parts
                cid += 1
    return Vocab(words, classes, cats, topics, sylls)


# -- corpus specification ----------------------------------------------------------


@dataclass
class CorpusSpec:
    n_train: int = 2000
    n_valid: int = 200
    n_test: int = 300
    spontaneous_fraction: float = 0.3
    sigma_read: float = 0.3
    sigma_spont: float = 1.2
    frame_dropout: float = 0.1
    filler_prob: float = 0.05
    paraphraser: str = "roundtrip"  # roundtrip | lexsub
    sampling: str = "nucleus"  # beam1 | topk | nucleus
    top_k: int = 50
    top_p: float = 0.95
    p_sub: float = 0.4
    drift_threshold: float = 0.3
    max_paraphrase_tries: int = 5
    n_topics: int = 6
    vocab_seed: int = 1234

    def validate(self) -> None:
        for name in ("n_train", "n_valid", "n_test"):
            if getattr(self, name) < 1:
                raise CorpusError(f"{name} must be >= 1")
        if not 0.0 <= self.spontaneous_fraction <= 1.0:
            raise CorpusError(f"spontaneous_fraction must lie in [0, 1], got {self.spontaneous_fraction}")
        if not 0.0 <= self.sigma_read <= self.sigma_spont:
            raise CorpusError("need 0 <= sigma_read <= sigma_spont")
        for name in ("frame_dropout", "filler_prob", "p_sub", "top_p", "drift_threshold"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise CorpusError(f"{name} must lie in [0, 1]")
        if self.paraphraser not in ("roundtrip", "lexsub"):
            raise CorpusError(f"unknown paraphraser {self.paraphraser!r}")
        if self.sampling not in ("beam1", "topk", "nucleus"):
            raise CorpusError(f"unknown sampling mode {self.sampling!r}")
        if self.top_k < 1:
            raise CorpusError("top_k must be >= 1")


@dataclass
class Utterance:
    id: str
    kind: str
    transcript: list[int]
    paraphrase: list[int] | None
    frames: np.ndarray
    noise_sigma: float
    split: str

    def __eq__(self, other):
        if not isinstance(other, Utterance):
            return NotImplemented
        return (
            self.id == other.id and self.kind == other.kind and self.split == other.split
            and self.transcript == other.transcript and self.paraphrase == other.paraphrase
            and self.noise_sigma == other.noise_sigma
            and self.frames.shape == other.frames.shape
            and self.frames.tobytes() == other.frames.tobytes()
        )


# -- frames ----------------------------------------------------------------------


def _hash_vector(key: str, d: int) -> np.ndarray:
    return np.random.default_rng(_stable_seed("proto", key)).normal(size=d)


def prototype(surface: str, syllables: Sequence[str] | None, d: int) -> np.ndarray:
    """Per-token acoustic prototype, a function of the surface form only.

    Words that share syllables get correlated prototypes, so acoustic
    confusions mostly happen between similar-sounding words.
    """
    parts = list(syllables) if syllables else [surface]
    v = sum(_hash_vector(f"syl:{s}", d) for s in parts) / np.sqrt(len(parts))
    return 0.8 * v + 0.6 * _hash_vector(f"word:{surface}", d)


def synthesize_frames(
    Y: Sequence[int],
    kind: str,
    seed,
    vocab: Vocab,
    d: int = 16,
    sigma: float | None = None,
    spec: CorpusSpec | None = None,
) -> np.ndarray:
    """Frames (L, d): 2-4 noisy copies of each token's prototype.

    Spontaneous speech adds frame dropout and filler frames on top of the
    larger noise level.
    """
    if len(Y) == 0:
        raise CorpusError("cannot synthesize frames for an empty transcript")
    spec = spec or CorpusSpec()
    if sigma is None:
        sigma = spec.sigma_spont if kind == SPONTANEOUS else spec.sigma_read
    rng = np.random.default_rng(seed)
    filler = prototype("<filler>", None, d)
    rows = []
    for tok in Y:
        if tok == EOS:
            continue
        w = vocab.words[tok]
        proto = prototype(w, vocab.syllables.get(w), d)
        r = int(rng.integers(2, 5))
        for _ in range(r):
            frame = proto + sigma * rng.normal(size=d)
            if kind == SPONTANEOUS:
                if rng.random() < spec.frame_dropout:
                    continue
                rows.append(frame)
                if rng.random() < spec.filler_prob:
                    rows.append(filler + sigma * rng.normal(size=d))
            else:
                rows.append(frame)
    if not rows:
        rows.append(filler + sigma * rng.normal(size=d))
    return np.asarray(rows)


# -- paraphrasing -------------------------------------------------------------------


class ParaphraseProvider(Protocol):
    def paraphrase(self, Y: Sequence[int], rng: np.random.Generator) -> list[int]: ...


def top_k_set(weights: dict, k: int) -> list:
    order = sorted(weights, key=lambda c: (-weights[c], c))
    return order[: max(1, min(k, len(order)))]


def nucleus_set(weights: dict, p: float) -> list:
    """Smallest high-probability prefix whose mass reaches ``p``."""
    order = sorted(weights, key=lambda c: (-weights[c], c))
    total = sum(weights.values())
    out, mass = [], 0.0
    for c in order:
        out.append(c)
        mass += weights[c] / total
        if mass >= p - 1e-12:
            break
    return out


def _choose(weights: dict, mode: str, k: int, p: float, rng: np.random.Generator):
    if mode == "beam1":
        return top_k_set(weights, 1)[0]
    pool = top_k_set(weights, k) if mode == "topk" else nucleus_set(weights, p)
    w = np.array([weights[c] for c in pool], dtype=np.float64)
    return pool[int(rng.choice(len(pool), p=w / w.sum()))]


@dataclass
class LexiconProvider:
    """Word-level round trip through a pivot lexicon.

    ``forward[w]`` maps a source id to weighted pivot strings; ``backward[p]``
    maps a pivot string back to weighted source ids.
    """

    forward: dict[int, dict[str, float]]
    backward: dict[str, dict[int, float]]
    mode: str = "nucleus"
    k: int = 50
    p: float = 0.95
    misses: int = 0

    @classmethod
    def from_vocab(cls, vocab: Vocab, mode: str = "nucleus", k: int = 50, p: float = 0.95,
                   seed: int = 99) -> "LexiconProvider":
        rng = np.random.default_rng(seed)
        fwd: dict[int, dict[str, float]] = {}
        bwd: dict[str, dict[int, float]] = {}
        for c, members in sorted(vocab.class_members.items()):
            n_piv = int(rng.integers(1, 4))
            pivots = [f"pv{c}.{j}" for j in range(n_piv)]
            for m in members:
                w = rng.dirichlet(np.ones(n_piv))
                fwd[m] = {pv: float(x) for pv, x in zip(pivots, w)}
            for pv in pivots:
                w = rng.dirichlet(np.ones(len(members)))
                bwd[pv] = {m: float(x) for m, x in zip(members, w)}
        return cls(fwd, bwd, mode, k, p)

    @classmethod
    def identity(cls, vocab: Vocab, mode: str = "beam1") -> "LexiconProvider":
        fwd = {i: {f"id{i}": 1.0} for i in range(len(vocab)) if vocab.is_content(i)}
        bwd = {f"id{i}": {i: 1.0} for i in fwd}
        return cls(fwd, bwd, mode)

    def hop(self, weights: dict, rng):
        return _choose(weights, self.mode, self.k, self.p, rng)

    def paraphrase(self, Y: Sequence[int], rng: np.random.Generator) -> list[int]:
        out = []
        for tok in Y:
            tok = int(tok)
            cands = self.forward.get(tok)
            if cands is None:
                # function words, specials and coverage gaps pass through
                out.append(tok)
                continue
            pivot = self.hop(cands, rng)
            back = self.backward.get(pivot)
            if not back:
                self.misses += 1
                out.append(tok)
                continue
            out.append(int(self.hop(back, rng)))
        return out


def paraphrase_roundtrip(Y: Sequence[int], provider: LexiconProvider, seed) -> list[int]:
    return provider.paraphrase(Y, np.random.default_rng(seed))


def paraphrase_lexsub(Y: Sequence[int], vocab: Vocab, p_sub: float, seed) -> list[int]:
    """Replace each content word, with probability ``p_sub``, by another member of its class."""
    if not 0.0 <= p_sub <= 1.0:
        raise CorpusError("p_sub must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    out = []
    for tok in Y:
        tok = int(tok)
        if vocab.is_content(tok) and rng.random() < p_sub:
            alts = [m for m in vocab.synonyms(tok) if m != tok]
            if alts:
                tok = alts[int(rng.integers(len(alts)))]
        out.append(tok)
    return out


def _words_only(Y: Sequence[int]) -> list[int]:
    return [int(t) for t in Y if int(t) not in (PAD, BOS, EOS)]


def word_order_drift(Y: Sequence[int], Yp: Sequence[int], vocab: Vocab) -> float:
    """1 - LCS / max length over synonym-class-collapsed word sequences."""
    a = [vocab.class_key(t) for t in _words_only(Y)]
    b = [vocab.class_key(t) for t in _words_only(Yp)]
    if not a or not b:
        raise CorpusError("word_order_drift needs two nonempty sequences")
    return 1.0 - kernels.lcs_length(a, b) / max(len(a), len(b))


# -- LLM prompt -----------------------------------------------------------------------

_PROMPT_HEAD = "Paraphrase the following sentence in {lang}, strictly adhering to these guidelines:"
PROMPT_GUIDELINES = (
    "Maintain the original sentence structure and word order as much as possible.",
    "Replace at least one word, and aim to replace as many words as feasible with Hindi synonyms or words with similar meanings.",
    "Do not add extra words or elaborate on the description.",
    "Preserve named entities (e.g., proper names, places) in their original form.",
    "Convert ALL numbers to their Hindi word equivalents. This includes dates, years, percentages, and any other numerical values.",
    "Ensure that all replacements are common Hindi words, avoiding obscure or highly technical terms.",
    "If a direct Hindi synonym is not available, use a phrase that conveys the same meaning.",
    "Maintain the original tense and grammatical structure of the sentence.",
    "If the original sentence contains English words commonly used in Hindi, you may keep them unchanged.",
)
_PROMPT_WARNING = (
    "IMPORTANT: Double-check that NO numerical digits remain in your paraphrase. "
    "All numbers must be written out in Hindi words."
)


def render_llm_prompt(sentence: str, lang: str, examples: Sequence[tuple[str, str]] = ()) -> str:
    """Prompt text for an external LLM paraphraser. Nothing is sent anywhere."""
    if not sentence.strip():
        raise CorpusError("sentence must be nonempty")
    lines = [_PROMPT_HEAD.format(lang=lang)]
    lines += [f"{i}. {g}" for i, g in enumerate(PROMPT_GUIDELINES, 1)]
    lines += ["", _PROMPT_WARNING]
    if examples:
        lines += ["", "Examples:"]
        lines += [f"Sentence: {s}\nParaphrase: {p}" for s, p in examples]
    lines += ["", f"Sentence: {sentence}", "Paraphrase:"]
    return "\n".join(lines)


# -- generation ---------------------------------------------------------------------


@dataclass
class GenerationSummary:
    n_utterances: int
    spontaneous_fraction: dict
    drift_rejections: int
    paraphrase_fallbacks: int
    lexicon_misses: int

    def to_dict(self) -> dict:
        return asdict(self)


def _sample_transcript(vocab: Vocab, rng: np.random.Generator, by_slot: dict) -> list[int]:
    template = TEMPLATES[int(rng.integers(len(TEMPLATES)))]
    topic = int(rng.integers(len(by_slot["topics"])))
    out = []
    for slot in template:
        pool = by_slot["topics"][topic].get(slot) or by_slot["function"][slot]
        out.append(pool[int(rng.integers(len(pool)))])
    return out + [EOS]


def _slot_tables(vocab: Vocab) -> dict:
    topics: dict[int, dict[str, list[int]]] = {}
    function: dict[str, list[int]] = {}
    for i, (cat, t) in enumerate(zip(vocab.category, vocab.topic)):
        if cat == "SPECIAL":
            continue
        if t < 0:
            function.setdefault(cat, []).append(i)
        else:
            topics.setdefault(t, {}).setdefault(cat, []).append(i)
    return {"topics": [topics[t] for t in sorted(topics)], "function": function}


def make_paraphrase(Y, vocab: Vocab, spec: CorpusSpec, provider, rng) -> tuple[list[int], int, bool]:
    """Draw paraphrases until one passes the drift filter.

    Returns (paraphrase, rejections, fell_back); after ``max_paraphrase_tries``
    rejections the transcript itself is used.
    """
    rejections = 0
    for _ in range(spec.max_paraphrase_tries):
        if spec.paraphraser == "roundtrip":
            Yp = provider.paraphrase(Y, rng)
        else:
            Yp = paraphrase_lexsub(Y, vocab, spec.p_sub, int(rng.integers(2**63)))
        if word_order_drift(Y, Yp, vocab) <= spec.drift_threshold:
            return Yp, rejections, False
        rejections += 1
    return list(Y), rejections, True


def generate_corpus(
    spec: CorpusSpec,
    seed: int,
    vocab: Vocab | None = None,
    provider: ParaphraseProvider | None = None,
    frame_dim: int = 16,
) -> tuple[list[Utterance], GenerationSummary]:
    spec.validate()
    vocab = vocab or build_vocab(spec.n_topics, spec.vocab_seed)
    if not any(vocab.is_content(i) for i in range(len(vocab))):
        raise CorpusError("vocabulary has no content words")
    if provider is None and spec.paraphraser == "roundtrip":
        provider = LexiconProvider.from_vocab(vocab, spec.sampling, spec.top_k, spec.top_p)
    tables = _slot_tables(vocab)
    utts: list[Utterance] = []
    rejections = fallbacks = 0
    for split_idx, (split, n) in enumerate(zip(SPLITS, (spec.n_train, spec.n_valid, spec.n_test))):
        for i in range(n):
            rng = np.random.default_rng([seed, split_idx, i])
            kind = SPONTANEOUS if rng.random() < spec.spontaneous_fraction else READ
            Y = _sample_transcript(vocab, rng, tables)
            Yp, rej, fell = make_paraphrase(Y, vocab, spec, provider, rng)
            rejections += rej
            fallbacks += fell
            sigma = spec.sigma_spont if kind == SPONTANEOUS else spec.sigma_read
            frames = synthesize_frames(Y, kind, rng, vocab, frame_dim, sigma, spec)
            utts.append(Utterance(f"{split}-{i:05d}", kind, Y, Yp, frames, sigma, split))
    fractions = {}
    for split in SPLITS:
        sub = [u for u in utts if u.split == split]
        fractions[split] = sum(u.kind == SPONTANEOUS for u in sub) / len(sub)
    summary = GenerationSummary(
        len(utts), fractions, rejections, fallbacks, getattr(provider, "misses", 0)
    )
    return utts, summary


def split_of(utts: Sequence[Utterance], split: str) -> list[Utterance]:
    return [u for u in utts if u.split == split]


# -- manifest + frames sidecar -----------------------------------------------------
#
# frames sidecar layout (little-endian):
#   0   8 bytes  magic b"AMPSFRMS"
#   8   uint32   version (1)
#   12  uint32   frame width d
#   16  uint64   number of entries n
#   24  n * 16   index: (uint64 byte offset from payload start, uint64 rows)
#   24+16n       payload: float64 row-major matrices back to back

FRAMES_MAGIC = b"AMPSFRMS"
FRAMES_VERSION = 1


def write_frames(path, mats: Sequence[np.ndarray]) -> None:
    d = mats[0].shape[1] if mats else 0
    index, offset = [], 0
    for m in mats:
        if m.ndim != 2 or m.shape[1] != d:
            raise ManifestError("all frame matrices must share the frame width")
        index.append((offset, m.shape[0]))
        offset += m.size * 8
    with open(path, "wb") as fh:
        fh.write(FRAMES_MAGIC)
        fh.write(struct.pack("<IIQ", FRAMES_VERSION, d, len(mats)))
        for off, rows in index:
            fh.write(struct.pack("<QQ", off, rows))
        for m in mats:
            fh.write(np.ascontiguousarray(m, dtype="<f8").tobytes())


def read_frames(path) -> list[np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"frames sidecar {path} not found")
    raw = path.read_bytes()
    if raw[:8] != FRAMES_MAGIC:
        raise ManifestError(f"{path}: bad frames magic")
    version, d, n = struct.unpack_from("<IIQ", raw, 8)
    if version != FRAMES_VERSION:
        raise ManifestError(f"{path}: unsupported frames version {version}")
    base = 24 + 16 * n
    out = []
    for k in range(n):
        off, rows = struct.unpack_from("<QQ", raw, 24 + 16 * k)
        if base + off + rows * d * 8 > len(raw):
            raise ManifestError(f"{path}: entry {k} runs past end of file")
        out.append(np.frombuffer(raw, dtype="<f8", count=rows * d, offset=base + off)
                   .astype(np.float64).reshape(rows, d))
    return out


def write_manifest(path, utts: Sequence[Utterance], frames_name: str | None = None) -> None:
    """One JSON object per line plus a frames sidecar next to the manifest."""
    path = Path(path)
    frames_name = frames_name or path.stem + ".frames"
    write_frames(path.parent / frames_name, [u.frames for u in utts])
    with open(path, "w", encoding="utf-8") as fh:
        for k, u in enumerate(utts):
            rec = {
                "id": u.id, "kind": u.kind, "split": u.split,
                "transcript": [int(t) for t in u.transcript],
                "paraphrase": None if u.paraphrase is None else [int(t) for t in u.paraphrase],
                "sigma": u.noise_sigma,
                "frames_ref": {"file": frames_name, "index": k},
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


_REQUIRED = ("id", "kind", "split", "transcript", "paraphrase", "sigma", "frames_ref")


def read_manifest(path) -> list[Utterance]:
    path = Path(path)
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise ManifestError(f"{path}:{lineno}: malformed record ({e.msg})") from None
            missing = [k for k in _REQUIRED if k not in rec]
            if missing:
                raise ManifestError(f"{path}:{lineno}: missing fields {missing}")
            records.append((lineno, rec))
    cache: dict[str, list[np.ndarray]] = {}
    utts = []
    for lineno, rec in records:
        ref = rec["frames_ref"]
        if ref["file"] not in cache:
            cache[ref["file"]] = read_frames(path.parent / ref["file"])
        mats = cache[ref["file"]]
        if not 0 <= ref["index"] < len(mats):
            raise ManifestError(f"{path}:{lineno}: frames index {ref['index']} out of range")
        utts.append(Utterance(rec["id"], rec["kind"], rec["transcript"], rec["paraphrase"],
                              mats[ref["index"]], rec["sigma"], rec["split"]))
    return utts


def write_vocab(path, vocab: Vocab) -> None:
    Path(path).write_text(json.dumps(vocab.to_dict(), sort_keys=True, indent=1) + "\n")


def read_vocab(path) -> Vocab:
    return Vocab.from_dict(json.loads(Path(path).read_text()))

