import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from amps_lab import corpus as C
from amps_lab.model import BOS, EOS, PAD

from .oracles import nucleus_sets

GUIDELINES = [
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


def test_vocab_layout(vocab):
    assert len(vocab) == 200
    assert vocab.words[:4] == ["<pad>", "<s>", "</s>", "<unk>"]
    assert len(set(vocab.words)) == len(vocab)
    for c, members in vocab.class_members.items():
        for m in members:
            assert vocab.synonyms(m) == members


def test_vocab_roundtrip(vocab):
    back = C.Vocab.from_dict(vocab.to_dict())
    assert back.words == vocab.words and back.classes == vocab.classes


def test_decode_strips_specials(vocab):
    ids = vocab.encode(vocab.words[10:13])
    assert vocab.decode([BOS] + ids + [EOS, 7, 8]) == vocab.words[10:13]


def test_stem_suffix_table():
    assert C.stem("kotata") == "kota"
    assert C.stem("ta") == "ta"


def test_drift_examples(vocab):
    a, b, c, d = [i for i in range(len(vocab)) if vocab.is_content(i)][:16:4]
    assert C.word_order_drift([a, b, c, d], [a, b, c, d], vocab) == 0.0
    assert C.word_order_drift([a, b, c, d], [d, c, b, a], vocab) == pytest.approx(0.75)
    syn = [m for m in vocab.synonyms(a) if m != a]
    if syn:
        assert C.word_order_drift([a, b], [syn[0], b], vocab) == 0.0


def test_generation_deterministic(vocab):
    spec = C.CorpusSpec(n_train=10, n_valid=3, n_test=3)
    a, sa = C.generate_corpus(spec, 4, vocab)
    b, sb = C.generate_corpus(spec, 4, vocab)
    assert a == b and sa == sb
    c, _ = C.generate_corpus(spec, 5, vocab)
    assert a != c


def test_generation_contract(small_corpus, vocab):
    utts, summary = small_corpus
    assert [u.split for u in utts].count("train") == 24
    for u in utts:
        assert u.transcript[-1] == EOS and u.paraphrase[-1] == EOS
        assert PAD not in u.transcript and BOS not in u.transcript
        assert u.frames.ndim == 2 and u.frames.shape[1] == 16
        assert C.word_order_drift(u.transcript, u.paraphrase, vocab) <= 0.3
    assert set(summary.spontaneous_fraction) == {"train", "valid", "test"}


def test_spontaneous_frames_are_noisier(vocab):
    spec = C.CorpusSpec(n_train=200, n_valid=1, n_test=1)
    utts, _ = C.generate_corpus(spec, 0, vocab)
    kinds = {k: [u for u in utts if u.kind == k] for k in (C.READ, C.SPONTANEOUS)}
    assert 0.2 < len(kinds[C.SPONTANEOUS]) / len(utts) < 0.4
    assert {u.noise_sigma for u in kinds[C.READ]} == {spec.sigma_read}


def test_spec_validation():
    with pytest.raises(C.CorpusError):
        C.CorpusSpec(spontaneous_fraction=1.5).validate()
    with pytest.raises(C.CorpusError):
        C.CorpusSpec(paraphraser="gpt").validate()


def test_manifest_roundtrip(tmp_path, small_corpus):
    utts, _ = small_corpus
    C.write_manifest(tmp_path / "c.jsonl", utts)
    assert C.read_manifest(tmp_path / "c.jsonl") == utts
    first = (tmp_path / "c.jsonl").read_bytes()
    C.write_manifest(tmp_path / "c.jsonl", utts)
    assert (tmp_path / "c.jsonl").read_bytes() == first


def test_manifest_missing_field(tmp_path, small_corpus):
    utts, _ = small_corpus
    C.write_manifest(tmp_path / "c.jsonl", utts[:3])
    lines = (tmp_path / "c.jsonl").read_text().splitlines()
    lines[1] = lines[1].replace('"transcript"', '"transcrpt"')
    (tmp_path / "c.jsonl").write_text("\n".join(lines) + "\n")
    with pytest.raises(C.ManifestError, match=r"c.jsonl:2"):
        C.read_manifest(tmp_path / "c.jsonl")


def test_manifest_missing_sidecar(tmp_path, small_corpus):
    utts, _ = small_corpus
    C.write_manifest(tmp_path / "c.jsonl", utts[:3])
    (tmp_path / "c.frames").unlink()
    with pytest.raises(C.ManifestError, match="not found"):
        C.read_manifest(tmp_path / "c.jsonl")


def test_truncated_sidecar(tmp_path, small_corpus):
    utts, _ = small_corpus
    C.write_manifest(tmp_path / "c.jsonl", utts[:3])
    raw = (tmp_path / "c.frames").read_bytes()
    (tmp_path / "c.frames").write_bytes(raw[:-8])
    with pytest.raises(C.ManifestError):
        C.read_manifest(tmp_path / "c.jsonl")


def test_identity_provider_returns_input(vocab):
    prov = C.LexiconProvider.identity(vocab)
    Y = [4, 50, 16, 17, 72, EOS]
    assert C.paraphrase_roundtrip(Y, prov, 0) == Y


def test_uncovered_tokens_pass_through(vocab):
    prov = C.LexiconProvider({}, {})
    assert prov.paraphrase([UNK := 3, 50, EOS], np.random.default_rng(0)) == [UNK, 50, EOS]


def test_missing_backward_entry_counted(vocab):
    prov = C.LexiconProvider({50: {"pv": 1.0}}, {}, mode="beam1")
    assert prov.paraphrase([50, EOS], np.random.default_rng(0)) == [50, EOS]
    assert prov.misses == 1


def test_lexsub_stays_in_class(vocab):
    Y = [i for i in range(len(vocab)) if vocab.is_content(i)][:10] + [EOS]
    out = C.paraphrase_lexsub(Y, vocab, 1.0, 0)
    assert [vocab.class_key(a) for a in Y] == [vocab.class_key(b) for b in out]
    assert C.paraphrase_lexsub(Y, vocab, 0.0, 0) == Y


def test_top_k_set():
    w = {"a": 0.5, "b": 0.3, "c": 0.2}
    assert C.top_k_set(w, 2) == ["a", "b"]
    assert C.top_k_set(w, 10) == ["a", "b", "c"]


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0.01, 1.0), min_size=1, max_size=7), st.floats(0.05, 1.0))
def test_nucleus_set_is_minimal(ws, p):
    w = {i: x for i, x in enumerate(ws)}
    got = set(C.nucleus_set(w, p))
    assert got <= nucleus_sets(w, p)
    assert sum(w[k] for k in got) / sum(ws) >= p - 1e-12


def test_prompt_contains_guidelines():
    text = C.render_llm_prompt("ek vakya", "Hindi", [("a", "b")])
    for g in GUIDELINES:
        assert g in text
    assert text.startswith("Paraphrase the following sentence in Hindi, strictly adhering to these guidelines:")
    assert text.endswith("Sentence: ek vakya\nParaphrase:")
    with pytest.raises(C.CorpusError):
        C.render_llm_prompt("  ", "Hindi")
