"""Speech/text dual-encoder, shared-decoder network with bottleneck adapters.

Parameters live in one flat ``name -> Tensor`` mapping. The S2T route reads
``speech.*`` and the T2T route reads ``text.*``; both run the same ``dec.*``
tensors and the same token embedding, so updates through either route move
the shared decoder.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import numerics as nx
from .numerics import Tensor

PAD, BOS, EOS, UNK = 0, 1, 2, 3


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 64
    adapter_dim: int = 32
    n_speech_layers: int = 2
    n_text_enc_layers: int = 2
    n_dec_layers: int = 2
    n_heads: int = 4
    conv_width: int = 3
    vocab_size: int = 200
    frame_dim: int = 16
    ffn_dim: int = 128
    max_seq_len: int = 512
    adapter_only_training: bool = False
    text_encoder_adapters: bool = True
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.adapter_dim < 1:
            raise ValueError("adapter_dim must be >= 1")
        if self.vocab_size < 4:
            raise ValueError("vocab_size must leave room for the 4 special tokens")
        if self.conv_width % 2 == 0:
            raise ValueError("conv_width must be odd")

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


PRESETS: dict[str, ModelConfig] = {
    "desk": ModelConfig(),
    # adapters only in speech encoder and decoder, as in the original setup
    "paper-scale-2048": ModelConfig(
        d_model=1024, adapter_dim=2048, n_speech_layers=12, n_text_enc_layers=12,
        n_dec_layers=12, n_heads=16, conv_width=31, vocab_size=256_206, frame_dim=160,
        ffn_dim=4096, max_seq_len=4096, adapter_only_training=True, text_encoder_adapters=False,
    ),
    "paper-scale-512": ModelConfig(
        d_model=1024, adapter_dim=512, n_speech_layers=12, n_text_enc_layers=12,
        n_dec_layers=12, n_heads=16, conv_width=31, vocab_size=256_206, frame_dim=160,
        ffn_dim=4096, max_seq_len=4096, adapter_only_training=True, text_encoder_adapters=False,
    ),
}


# -- parameter layout ------------------------------------------------------------


def _attn_shapes(prefix: str, D: int) -> dict:
    out = {}
    for p in ("q", "k", "v", "o"):
        out[f"{prefix}.w{p}"] = (D, D)
        out[f"{prefix}.b{p}"] = (D,)
    return out


def _ln_shapes(prefix: str, D: int) -> dict:
    return {f"{prefix}.g": (D,), f"{prefix}.b": (D,)}


def _ffn_shapes(prefix: str, D: int, F: int) -> dict:
    return {f"{prefix}.w1": (D, F), f"{prefix}.b1": (F,), f"{prefix}.w2": (F, D), f"{prefix}.b2": (D,)}


def _adapter_shapes(prefix: str, D: int, A: int) -> dict:
    return {
        f"{prefix}.down.w": (D, A), f"{prefix}.down.b": (A,),
        f"{prefix}.up.w": (A, D), f"{prefix}.up.b": (D,),
    }


def parameter_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Ordered name -> shape map; the single source of the parameter layout."""
    D, A, F, V = cfg.d_model, cfg.adapter_dim, cfg.ffn_dim, cfg.vocab_size
    s: dict[str, tuple[int, ...]] = {
        "speech.in_proj.w": (cfg.frame_dim, D),
        "speech.in_proj.b": (D,),
    }
    for i in range(cfg.n_speech_layers):
        p = f"speech.layers.{i}"
        s.update(_ln_shapes(f"{p}.ln_att", D))
        s.update(_attn_shapes(f"{p}.att", D))
        s.update(_ln_shapes(f"{p}.ln_conv", D))
        s[f"{p}.conv.k"] = (cfg.conv_width, D)
        s[f"{p}.conv.b"] = (D,)
        s.update(_ln_shapes(f"{p}.ln_ffn", D))
        s.update(_ffn_shapes(f"{p}.ffn", D, F))
        s.update(_adapter_shapes(f"{p}.adapter", D, A))
    s.update(_ln_shapes("speech.ln_out", D))
    s["embed"] = (V, D)
    for i in range(cfg.n_text_enc_layers):
        p = f"text.layers.{i}"
        s.update(_ln_shapes(f"{p}.ln_att", D))
        s.update(_attn_shapes(f"{p}.att", D))
        s.update(_ln_shapes(f"{p}.ln_ffn", D))
        s.update(_ffn_shapes(f"{p}.ffn", D, F))
        if cfg.text_encoder_adapters:
            s.update(_adapter_shapes(f"{p}.adapter", D, A))
    s.update(_ln_shapes("text.ln_out", D))
    for i in range(cfg.n_dec_layers):
        p = f"dec.layers.{i}"
        s.update(_ln_shapes(f"{p}.ln_self", D))
        s.update(_attn_shapes(f"{p}.self_att", D))
        s.update(_ln_shapes(f"{p}.ln_cross", D))
        s.update(_attn_shapes(f"{p}.cross_att", D))
        s.update(_ln_shapes(f"{p}.ln_ffn", D))
        s.update(_ffn_shapes(f"{p}.ffn", D, F))
        s.update(_adapter_shapes(f"{p}.adapter", D, A))
    s.update(_ln_shapes("dec.ln_out", D))
    s["dec.out.w"] = (D, V)
    s["dec.out.b"] = (V,)
    return s


def is_adapter(name: str) -> bool:
    return ".adapter." in name


def is_text_encoder(name: str) -> bool:
    return name.startswith("text.")


def parameter_count(cfg: ModelConfig, adapter_only: bool = False) -> int:
    return sum(
        math.prod(shape)
        for name, shape in parameter_shapes(cfg).items()
        if not adapter_only or is_adapter(name)
    )


def _init_array(name: str, shape, rng: np.random.Generator) -> np.ndarray:
    leaf = name.rsplit(".", 1)[-1]
    if name.endswith(".up.w") or name.endswith(".up.b"):
        return np.zeros(shape)
    if ".ln" in name:
        return np.ones(shape) if leaf == "g" else np.zeros(shape)
    if name == "embed":
        return rng.normal(0.0, 1.0, shape)
    if name == "dec.out.w":
        return rng.normal(0.0, 0.02, shape)
    if name.endswith(".down.w"):
        return rng.normal(0.0, 0.02, shape)
    if name.endswith(".conv.k"):
        return rng.normal(0.0, 1.0 / math.sqrt(shape[0]), shape)
    if len(shape) == 2:
        return rng.normal(0.0, 1.0 / math.sqrt(shape[0]), shape)
    return np.zeros(shape)


def sinusoidal_positions(length: int, dim: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(0, dim, 2)[None, :]
    angle = pos / np.power(10000.0, i / dim)
    pe = np.zeros((length, dim))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : dim // 2])
    return pe


# -- batching helpers --------------------------------------------------------------


def pad_frames(frames: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    lens = np.array([f.shape[0] for f in frames], dtype=np.int64)
    out = np.zeros((len(frames), int(lens.max()), frames[0].shape[1]))
    for b, f in enumerate(frames):
        out[b, : f.shape[0]] = f
    return out, lens


def pad_ids(seqs: list, fill: int = PAD) -> tuple[np.ndarray, np.ndarray]:
    lens = np.array([len(s) for s in seqs], dtype=np.int64)
    out = np.full((len(seqs), int(lens.max())), fill, dtype=np.int64)
    for b, s in enumerate(seqs):
        out[b, : len(s)] = s
    return out, lens


def key_mask(lengths: np.ndarray, L: int) -> np.ndarray:
    """(B, 1, 1, L) boolean; True where the key position is real."""
    return (np.arange(L)[None, :] < lengths[:, None])[:, None, None, :]


def causal_mask(T: int) -> np.ndarray:
    return np.tril(np.ones((T, T), dtype=bool))[None, None]


# -- the network ----------------------------------------------------------------------


class MultimodalModel:
    def __init__(self, cfg: ModelConfig, seed: int = 0, params: dict[str, Tensor] | None = None):
        self.cfg = cfg
        if params is None:
            rng = np.random.default_rng(seed)
            params = {
                name: nx.parameter(_init_array(name, shape, rng), name=name)
                for name, shape in parameter_shapes(cfg).items()
            }
        self.params = params
        self._pe = sinusoidal_positions(cfg.max_seq_len, cfg.d_model)

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def copy(self) -> "MultimodalModel":
        return MultimodalModel(
            self.cfg, params={k: nx.parameter(v.data.copy(), name=k) for k, v in self.params.items()}
        )

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        expected = parameter_shapes(self.cfg)
        if set(state) != set(expected):
            missing = sorted(set(expected) - set(state))
            extra = sorted(set(state) - set(expected))
            raise ValueError(f"state mismatch: missing={missing[:5]} unexpected={extra[:5]}")
        for k, arr in state.items():
            if tuple(arr.shape) != tuple(expected[k]):
                raise ValueError(f"shape mismatch for {k}: {arr.shape} vs {expected[k]}")
            self.params[k].data = np.array(arr, dtype=np.float64)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def trainable_parameters(self, adapter_only: bool | None = None) -> dict[str, Tensor]:
        if adapter_only is None:
            adapter_only = self.cfg.adapter_only_training
        return {k: v for k, v in self.params.items() if not adapter_only or is_adapter(k)}

    # -- sublayers -------------------------------------------------------------
    def _ln(self, prefix: str, x: Tensor) -> Tensor:
        return nx.layernorm(x, self.params[f"{prefix}.g"], self.params[f"{prefix}.b"], self.cfg.ln_eps)

    def _dense(self, prefix: str, x: Tensor, w="w", b="b") -> Tensor:
        return nx.linear(x, self.params[f"{prefix}.{w}"], self.params[f"{prefix}.{b}"])

    def mha(self, prefix: str, xq: Tensor, xkv: Tensor, mask: np.ndarray | None) -> Tensor:
        """Multi-head attention MHA(Q=xq, K=xkv, V=xkv) on (B, T, D) inputs."""
        B, Tq, D = xq.shape
        Tk = xkv.shape[1]
        H = self.cfg.n_heads
        dh = D // H

        def heads(t: Tensor, T: int) -> Tensor:
            return nx.transpose(nx.reshape(t, (B, T, H, dh)), (0, 2, 1, 3))

        q = heads(self._dense(prefix, xq, "wq", "bq"), Tq)
        k = heads(self._dense(prefix, xkv, "wk", "bk"), Tk)
        v = heads(self._dense(prefix, xkv, "wv", "bv"), Tk)
        scores = nx.matmul(q, nx.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(dh))
        att = nx.softmax(scores, axis=-1, mask=mask)
        ctx = nx.reshape(nx.transpose(nx.matmul(att, v), (0, 2, 1, 3)), (B, Tq, D))
        return self._dense(prefix, ctx, "wo", "bo")

    def ffn(self, prefix: str, x: Tensor) -> Tensor:
        h = nx.gelu(self._dense(prefix, x, "w1", "b1"))
        return self._dense(prefix, h, "w2", "b2")

    def adapter(self, prefix: str, x: Tensor) -> Tensor:
        """Residual bottleneck: x + up(gelu(down(x)))."""
        h = nx.gelu(nx.linear(x, self.params[f"{prefix}.down.w"], self.params[f"{prefix}.down.b"]))
        return x + nx.linear(h, self.params[f"{prefix}.up.w"], self.params[f"{prefix}.up.b"])

    def _check_len(self, T: int) -> None:
        if T > self.cfg.max_seq_len:
            raise ValueError(f"sequence length {T} exceeds max_seq_len={self.cfg.max_seq_len}")

    # -- layers ------------------------------------------------------------------
    def speech_encoder_layer(self, i: int, h: Tensor, frame_mask: np.ndarray | None = None,
                             attn_mask: np.ndarray | None = None) -> Tensor:
        """MHA, then depthwise convolution, then FFN, then adapter (all pre-norm residual)."""
        p = f"speech.layers.{i}"
        if h.shape[-1] != self.cfg.d_model:
            raise nx.ShapeError(f"expected width {self.cfg.d_model}, got {h.shape[-1]}")
        a = self._ln(f"{p}.ln_att", h)
        h = h + self.mha(f"{p}.att", a, a, attn_mask)
        c = self._ln(f"{p}.ln_conv", h)
        if frame_mask is not None:
            c = c * frame_mask
        h = h + nx.depthwise_conv1d(c, self.params[f"{p}.conv.k"]) + self.params[f"{p}.conv.b"]
        h = h + self.ffn(f"{p}.ffn", self._ln(f"{p}.ln_ffn", h))
        return self.adapter(f"{p}.adapter", h)

    def text_encoder_layer(self, i: int, h: Tensor, attn_mask: np.ndarray | None = None) -> Tensor:
        p = f"text.layers.{i}"
        a = self._ln(f"{p}.ln_att", h)
        h = h + self.mha(f"{p}.att", a, a, attn_mask)
        h = h + self.ffn(f"{p}.ffn", self._ln(f"{p}.ln_ffn", h))
        if self.cfg.text_encoder_adapters:
            h = self.adapter(f"{p}.adapter", h)
        return h

    def decoder_layer(self, i: int, d: Tensor, enc: Tensor, self_mask: np.ndarray,
                      cross_mask: np.ndarray | None = None) -> Tensor:
        """Causal self-attention, cross-attention over ``enc``, FFN, adapter."""
        if self_mask.shape[-1] != self_mask.shape[-2] or np.any(np.triu(self_mask[0, 0], 1)):
            raise ValueError("decoder self-attention mask must be lower-triangular")
        p = f"dec.layers.{i}"
        a = self._ln(f"{p}.ln_self", d)
        d = d + self.mha(f"{p}.self_att", a, a, self_mask)
        d = d + self.mha(f"{p}.cross_att", self._ln(f"{p}.ln_cross", d), enc, cross_mask)
        d = d + self.ffn(f"{p}.ffn", self._ln(f"{p}.ln_ffn", d))
        return self.adapter(f"{p}.adapter", d)

    # -- stacks --------------------------------------------------------------------
    def encode_speech(self, frames: np.ndarray, lengths: np.ndarray) -> Tensor:
        B, L, d = frames.shape
        if d != self.cfg.frame_dim:
            raise nx.ShapeError(f"frame width {d} != frame_dim {self.cfg.frame_dim}")
        if L < 1:
            raise ValueError("speech input is empty")
        self._check_len(L)
        h = self._dense("speech.in_proj", nx.tensor(frames)) + self._pe[:L]
        fmask = (np.arange(L)[None, :] < lengths[:, None])[:, :, None].astype(np.float64)
        amask = key_mask(lengths, L)
        for i in range(self.cfg.n_speech_layers):
            h = self.speech_encoder_layer(i, h, fmask, amask)
        return self._ln("speech.ln_out", h)

    def encode_text(self, ids: np.ndarray, lengths: np.ndarray) -> Tensor:
        B, N = ids.shape
        if N < 1:
            raise ValueError("text input is empty")
        self._check_len(N)
        h = nx.embedding(self.params["embed"], ids) + self._pe[:N]
        amask = key_mask(lengths, N)
        for i in range(self.cfg.n_text_enc_layers):
            h = self.text_encoder_layer(i, h, amask)
        return self._ln("text.ln_out", h)

    def decode(self, enc: Tensor, enc_lengths: np.ndarray, y_in: np.ndarray) -> Tensor:
        """Teacher-forced logits (B, T, V) for decoder inputs ``y_in`` (B, T)."""
        B, T = y_in.shape
        self._check_len(T)
        d = nx.embedding(self.params["embed"], y_in) + self._pe[:T]
        smask = causal_mask(T)
        cmask = key_mask(enc_lengths, enc.shape[1])
        for i in range(self.cfg.n_dec_layers):
            d = self.decoder_layer(i, d, enc, smask, cmask)
        d = self._ln("dec.ln_out", d)
        return nx.linear(d, self.params["dec.out.w"], self.params["dec.out.b"])

    # -- pathways ------------------------------------------------------------------
    def s2t_batch(self, frames: np.ndarray, frame_lens: np.ndarray, y_in: np.ndarray) -> Tensor:
        return self.decode(self.encode_speech(frames, frame_lens), frame_lens, y_in)

    def t2t_batch(self, src: np.ndarray, src_lens: np.ndarray, y_in: np.ndarray) -> Tensor:
        return self.decode(self.encode_text(src, src_lens), src_lens, y_in)


def _validate_ids(ids, V: int, what: str) -> np.ndarray:
    arr = np.asarray(ids, dtype=np.int64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"{what} must be a nonempty 1-D id sequence")
    if arr[0] != BOS and what.endswith("_in"):
        raise ValueError(f"{what} must begin with BOS")
    if arr.min() < 0 or arr.max() >= V:
        raise IndexError(f"{what} contains ids outside [0, {V})")
    return arr


def forward_s2t(model: MultimodalModel, X: np.ndarray, Y_in) -> Tensor:
    """Teacher-forced logits (|Y_in|, V) for one utterance of frames X (L, d)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValueError("X must be a nonempty (L, d) frame matrix")
    y = _validate_ids(Y_in, model.cfg.vocab_size, "Y_in")
    logits = model.s2t_batch(X[None], np.array([X.shape[0]]), y[None])
    return nx.reshape(logits, logits.shape[1:])


def forward_t2t(model: MultimodalModel, Y, Yp_in) -> Tensor:
    """Teacher-forced logits (|Yp_in|, V) conditioned on transcript Y."""
    src = _validate_ids(Y, model.cfg.vocab_size, "Y")
    y = _validate_ids(Yp_in, model.cfg.vocab_size, "Yp_in")
    logits = model.t2t_batch(src[None], np.array([src.size]), y[None])
    return nx.reshape(logits, logits.shape[1:])


def trainable_parameters(model: MultimodalModel, adapter_only: bool) -> dict[str, Tensor]:
    return model.trainable_parameters(adapter_only)


def reachable_parameters(model: MultimodalModel, out: Tensor) -> set[str]:
    """Names of parameters the graph of ``out`` depends on."""
    by_id = {id(t): k for k, t in model.params.items()}
    return {by_id[id(t)] for t in nx.Tape(out).leaves() if id(t) in by_id}


# -- checkpoint container --------------------------------------------------------------
#
# Byte layout (all integers little-endian):
#   0   8 bytes  magic b"AMPSCKPT"
#   8   uint32   format version (1)
#   12  uint64   header length H in bytes
#   20  H bytes  UTF-8 JSON header, keys sorted:
#                {"config": {...}, "meta": {...},
#                 "tensors": [{"name", "shape", "offset", "count"}, ...]}
#   20+H         payload: float64 little-endian arrays, row-major, at
#                "offset" bytes from the payload start, in header order.

CKPT_MAGIC = b"AMPSCKPT"
CKPT_VERSION = 1


def save_checkpoint(path, model: MultimodalModel, extra_arrays: dict[str, np.ndarray] | None = None,
                    meta: dict | None = None) -> None:
    arrays = {f"param/{k}": v.data for k, v in model.params.items()}
    for k, v in (extra_arrays or {}).items():
        arrays[k] = np.asarray(v, dtype=np.float64)
    entries, offset = [], 0
    for name, arr in arrays.items():
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        offset += arr.size * 8
    header = json.dumps(
        {"config": asdict(model.cfg), "meta": meta or {}, "tensors": entries}, sort_keys=True
    ).encode("utf-8")
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<IQ", CKPT_VERSION, len(header)))
        fh.write(header)
        for arr in arrays.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    tmp.replace(path)


def load_checkpoint(path) -> tuple[MultimodalModel, dict[str, np.ndarray], dict]:
    """Returns (model, extra arrays, meta)."""
    raw = Path(path).read_bytes()
    if raw[:8] != CKPT_MAGIC:
        raise ValueError(f"{path}: not an amps_lab checkpoint")
    version, hlen = struct.unpack_from("<IQ", raw, 8)
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[20:20 + hlen].decode("utf-8"))
    base = 20 + hlen
    arrays = {}
    for e in header["tensors"]:
        start = base + e["offset"]
        buf = np.frombuffer(raw, dtype="<f8", count=e["count"], offset=start)
        arrays[e["name"]] = buf.astype(np.float64).reshape(e["shape"])
    cfg = ModelConfig.from_dict(header["config"])
    model = MultimodalModel(cfg, params={})
    model.params = {
        name: nx.parameter(arrays[f"param/{name}"], name=name) for name in parameter_shapes(cfg)
    }
    extras = {k: v for k, v in arrays.items() if not k.startswith("param/")}
    return model, extras, header["meta"]


def with_config(cfg: ModelConfig, **changes) -> ModelConfig:
    return replace(cfg, **changes)
