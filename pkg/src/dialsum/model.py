"""Hierarchical encoder, hierarchically-attending copy decoder, SUFM embeddings.

All GRU weight matrices keep the ``[z, r, n]`` gate layout of
:func:`dialsum.autodiff.gru_cell`. When the SUFM position embeddings are on,
the encoder and decoder GRUs get an extra input block ``w_pos`` stored as
its own parameter, so switching the embeddings off (or giving them zero
width) leaves every other parameter and every activation untouched.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, ParameterStore, Tensor
from .corpus import SourceEncoding, Vocabulary


@dataclass
class ModelConfig:
    d_e: int = 300
    d: int = 300
    d_up: int | None = None
    d_sp: int | None = None
    dropout: float = 0.2
    max_utt_positions: int = 50
    max_sum_positions: int = 100
    use_sufm_embedding: bool = True
    use_copy: bool = True

    def __post_init__(self):
        if self.d % 2 or self.d < 2:
            raise ValueError(f"hidden size d must be even and >= 2, got {self.d}")
        if self.d_e < 1:
            raise ValueError("d_e must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout ratio must lie in [0, 1), got {self.dropout}")
        if self.max_utt_positions < 1 or self.max_sum_positions < 1:
            raise ValueError("position table sizes must be >= 1")
        for name in ("d_up", "d_sp"):
            value = getattr(self, name)
            if value is not None and value < 0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def utt_pos_width(self) -> int:
        if not self.use_sufm_embedding:
            return 0
        return position_width(self.max_utt_positions) if self.d_up is None else self.d_up

    @property
    def sum_pos_width(self) -> int:
        if not self.use_sufm_embedding:
            return 0
        return position_width(self.max_sum_positions) if self.d_sp is None else self.d_sp

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        return cls(**{k: v for k, v in data.items() if k in cls.__dataclass_fields__})


def position_width(feature_vocab_size: int) -> int:
    """floor(V_f ** 0.7), the position-embedding width for a feature of V_f values."""
    width = int(math.floor(feature_vocab_size ** 0.7))
    # guard against 10.999999... style rounding
    if (width + 1) ** (1 / 0.7) <= feature_vocab_size:
        width += 1
    return width


@dataclass
class EncoderOutput:
    word_states: Tensor
    utterance_states: Tensor
    global_state: Tensor
    word_keys: Tensor | None = None
    utt_keys: Tensor | None = None


@dataclass
class AttentionTrace:
    """Per decode step: utterance attention, rescaled word attention, copy gate."""

    alpha_u: np.ndarray
    alpha_w: np.ndarray
    gate: np.ndarray

    def __len__(self) -> int:
        return len(self.gate)

    @classmethod
    def empty(cls, n_utts: int, n_tokens: int) -> "AttentionTrace":
        return cls(np.zeros((0, n_utts)), np.zeros((0, n_tokens)), np.zeros(0))

    def append(self, alpha_u: np.ndarray, alpha_w: np.ndarray, gate: float) -> "AttentionTrace":
        return AttentionTrace(np.vstack([self.alpha_u, alpha_u[None]]),
                              np.vstack([self.alpha_w, alpha_w[None]]),
                              np.append(self.gate, gate))


@dataclass
class DecoderOutput:
    """Teacher-forced decoder pass; every field keeps its graph for the losses."""

    probs: Tensor
    states: Tensor
    alpha_u: Tensor
    alpha_w: Tensor
    gate: Tensor

    def trace(self) -> AttentionTrace:
        return AttentionTrace(self.alpha_u.data.copy(), self.alpha_w.data.copy(),
                              self.gate.data.reshape(-1).copy())


@dataclass
class _SourceConstants:
    token_ids: np.ndarray
    utt_pos: np.ndarray
    pool: np.ndarray
    rescale: np.ndarray
    copy: np.ndarray


# ----------------------------------------------------------------------
# parameters
# ----------------------------------------------------------------------

def parameter_shapes(config: ModelConfig, vocab_size: int) -> dict[str, tuple[int, ...]]:
    d, de, h = config.d, config.d_e, config.d // 2
    dup, dsp = config.utt_pos_width, config.sum_pos_width
    shapes: dict[str, tuple[int, ...]] = {"embedding": (vocab_size, de)}
    if dup:
        shapes["utt_pos_embedding"] = (config.max_utt_positions, dup)
    if dsp:
        shapes["sum_pos_embedding"] = (config.max_sum_positions, dsp)

    def gru(prefix, n_in, hidden, n_pos):
        shapes[f"{prefix}.w_x"] = (3 * hidden, n_in)
        if n_pos:
            shapes[f"{prefix}.w_pos"] = (3 * hidden, n_pos)
        shapes[f"{prefix}.w_h"] = (3 * hidden, hidden)
        shapes[f"{prefix}.b_x"] = (3 * hidden,)
        shapes[f"{prefix}.b_h"] = (3 * hidden,)

    gru("enc_word_fwd", de, h, dup)
    gru("enc_word_bwd", de, h, dup)
    gru("enc_utt_fwd", d, h, 0)
    gru("enc_utt_bwd", d, h, 0)
    gru("dec", de, d, dsp)
    for level in ("attn_utt", "attn_word"):
        shapes[f"{level}.w_s"] = (d, d)
        shapes[f"{level}.w_k"] = (d, d)
        shapes[f"{level}.b"] = (d,)
        shapes[f"{level}.v"] = (d,)
    shapes["merge.w"] = (d, 3 * d)
    shapes["merge.b"] = (d,)
    if config.use_copy:
        shapes["gate.w"] = (1, d)
        shapes["gate.b"] = (1,)
    shapes["out.w"] = (vocab_size, d)
    shapes["out.b"] = (vocab_size,)
    return shapes


def init_parameters(config: ModelConfig, vocab: Vocabulary, seed: int,
                    pretrained_vectors: dict[str, np.ndarray] | None = None,
                    init_range: float = 0.1) -> ParameterStore:
    """Uniform(-0.1, 0.1) init, one seeded stream per parameter name.

    Rows of the token embedding covered by ``pretrained_vectors`` are
    overwritten with the given vectors.
    """
    store = ParameterStore()
    for name, shape in parameter_shapes(config, len(vocab)).items():
        rng = ad.name_rng(seed, name)
        store.add(name, rng.uniform(-init_range, init_range, size=shape))
    if pretrained_vectors:
        emb = store["embedding"].data
        for tok, vec in pretrained_vectors.items():
            vec = np.asarray(vec, dtype=np.float64)
            if vec.shape != (config.d_e,):
                raise ValueError(f"pretrained vector for {tok!r} has width {vec.shape}, expected {config.d_e}")
            if tok in vocab:
                emb[vocab.stoi[tok]] = vec
    return store


def load_word_vectors(path, d_e: int | None = None) -> dict[str, np.ndarray]:
    """Read ``token v1 v2 ...`` lines; rejects widths other than ``d_e``."""
    vectors = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split(" ")
            if len(parts) < 2:
                continue
            vec = np.array([float(x) for x in parts[1:]])
            if d_e is not None and len(vec) != d_e:
                raise ValueError(f"{path}:{lineno}: vector width {len(vec)} != d_e {d_e}")
            vectors[parts[0]] = vec
    return vectors


# ----------------------------------------------------------------------
# helpers
# ----------------------------------------------------------------------

def _constants(src: SourceEncoding, config: ModelConfig) -> _SourceConstants:
    key = (config.max_utt_positions,)
    cached = getattr(src, "_model_constants", None)
    if cached is not None and cached[0] == key:
        return cached[1]
    n_tok, n_utt = len(src), src.num_utterances
    utt0 = np.asarray(src.utt_index) - 1
    rescale = np.zeros((n_utt, n_tok))
    rescale[utt0, np.arange(n_tok)] = 1.0
    pool = rescale / rescale.sum(axis=1, keepdims=True)
    copy = np.zeros((n_tok, src.ext_size))
    copy[np.arange(n_tok), src.ext_ids] = 1.0
    consts = _SourceConstants(
        token_ids=np.asarray(src.token_ids),
        utt_pos=np.minimum(utt0, config.max_utt_positions - 1),
        pool=pool, rescale=rescale, copy=copy)
    object.__setattr__(src, "_model_constants", (key, consts))
    return consts


def _input_weight(params: ParameterStore, prefix: str) -> Tensor:
    w_x = params[f"{prefix}.w_x"]
    w_pos = params.get(f"{prefix}.w_pos")
    return w_x if w_pos is None else ad.concat([w_x, w_pos], axis=1)


def _with_position(x: Tensor, params: ParameterStore, table: str, positions) -> Tensor:
    emb = params.get(table)
    if emb is None:
        return x
    return ad.concat([x, emb[positions]], axis=1)


def _gru_over(x: Tensor, params: ParameterStore, prefix: str, h0: Tensor | None = None) -> Tensor:
    hidden = params[f"{prefix}.w_h"].shape[1]
    if h0 is None:
        h0 = Tensor(np.zeros(hidden))
    gx = ad.linear(x, _input_weight(params, prefix), params[f"{prefix}.b_x"])
    return ad.gru_sequence(gx, params[f"{prefix}.w_h"], params[f"{prefix}.b_h"], h0)


def _bigru(x: Tensor, params: ParameterStore, prefix: str) -> tuple[Tensor, Tensor, Tensor]:
    fwd = _gru_over(x, params, f"{prefix}_fwd")
    bwd = ad.flip_rows(_gru_over(ad.flip_rows(x), params, f"{prefix}_bwd"))
    return ad.concat([fwd, bwd], axis=1), fwd, bwd


# ----------------------------------------------------------------------
# encoder / attention / output
# ----------------------------------------------------------------------

def encode(src: SourceEncoding, params: ParameterStore, config: ModelConfig, *,
           training: bool = False, rng: np.random.Generator | None = None) -> EncoderOutput:
    """Word BiGRU -> per-utterance mean pooling + dropout -> utterance BiGRU."""
    if len(src) == 0:
        raise ContractError("cannot encode an empty source")
    c = _constants(src, config)
    x = params["embedding"][c.token_ids]
    x = _with_position(x, params, "utt_pos_embedding", c.utt_pos)
    words, _, _ = _bigru(x, params, "enc_word")
    pooled = ad.dropout(ad.matmul(Tensor(c.pool), words), config.dropout, rng, training)
    utts, utt_fwd, utt_bwd = _bigru(pooled, params, "enc_utt")
    global_state = ad.concat([utt_fwd[-1], utt_bwd[0]], axis=0)
    return EncoderOutput(words, utts, global_state,
                         word_keys=ad.linear(words, params["attn_word.w_k"], params["attn_word.b"]),
                         utt_keys=ad.linear(utts, params["attn_utt.w_k"], params["attn_utt.b"]))


def _scores(states: Tensor, keys: Tensor, params: ParameterStore, level: str) -> Tensor:
    """``v^T tanh(W_s s_t + W_k k_i + b)`` for every (t, i); keys carry ``W_k k + b``."""
    q = ad.linear(states, params[f"{level}.w_s"])
    t, d = q.shape
    feats = ad.tanh(q.reshape(t, 1, d) + keys.reshape(1, keys.shape[0], d))
    return ad.matmul(feats, params[f"{level}.v"])


def hierarchical_attention(states: Tensor, enc: EncoderOutput, src: SourceEncoding,
                           params: ParameterStore, config: ModelConfig):
    """Utterance attention, rescaled word attention and both context vectors.

    ``states`` has one row per decode step (or per beam hypothesis).
    Returns ``(c_w, c_u, alpha_u, alpha_w_bar)``.
    """
    c = _constants(src, config)
    utt_keys = enc.utt_keys if enc.utt_keys is not None else ad.linear(
        enc.utterance_states, params["attn_utt.w_k"], params["attn_utt.b"])
    word_keys = enc.word_keys if enc.word_keys is not None else ad.linear(
        enc.word_states, params["attn_word.w_k"], params["attn_word.b"])
    alpha_u = ad.softmax(_scores(states, utt_keys, params, "attn_utt"), axis=-1)
    alpha_w = ad.softmax(_scores(states, word_keys, params, "attn_word"), axis=-1)
    scaled = alpha_w * ad.matmul(alpha_u, Tensor(c.rescale))
    alpha_w_bar = scaled / ad.tsum(scaled, axis=-1, keepdims=True)
    c_u = ad.matmul(alpha_u, enc.utterance_states)
    c_w = ad.matmul(alpha_w_bar, enc.word_states)
    return c_w, c_u, alpha_u, alpha_w_bar


def copy_distribution(merged: Tensor, alpha_w_bar: Tensor, src: SourceEncoding,
                      params: ParameterStore, config: ModelConfig) -> tuple[Tensor, Tensor]:
    """Gate-mixed distribution over the extended vocabulary and the gate itself."""
    c = _constants(src, config)
    p_vocab = ad.softmax(ad.linear(merged, params["out.w"], params["out.b"]), axis=-1)
    n_rows = merged.shape[0]
    pad = np.zeros((n_rows, src.ext_size - src.vocab_size))
    if not config.use_copy:
        return ad.concat([p_vocab, Tensor(pad)], axis=1), Tensor(np.zeros((n_rows, 1)))
    gate = ad.sigmoid(ad.linear(merged, params["gate.w"], params["gate.b"]))
    p_copy = ad.matmul(alpha_w_bar, Tensor(c.copy))
    return ad.concat([(1.0 - gate) * p_vocab, Tensor(pad)], axis=1) + gate * p_copy, gate


def mix_distribution(p_vocab: np.ndarray, p_copy: np.ndarray, gate: float) -> np.ndarray:
    """``(1 - g) P_V + g P_X`` with ``P_V`` zero-padded to the extended size."""
    out = np.asarray(p_copy, dtype=np.float64) * gate
    out[: len(p_vocab)] += (1.0 - gate) * np.asarray(p_vocab)
    return out


def _output(states: Tensor, enc: EncoderOutput, src: SourceEncoding, params: ParameterStore,
            config: ModelConfig, training: bool, rng):
    c_w, c_u, alpha_u, alpha_w_bar = hierarchical_attention(states, enc, src, params, config)
    merged = ad.linear(ad.concat([states, c_u, c_w], axis=1), params["merge.w"], params["merge.b"])
    merged = ad.dropout(merged, config.dropout, rng, training)
    probs, gate = copy_distribution(merged, alpha_w_bar, src, params, config)
    return probs, alpha_u, alpha_w_bar, gate


def _decoder_inputs(prev_ids, positions, params: ParameterStore, config: ModelConfig,
                    vocab_size: int, unk_id: int) -> Tensor:
    ids = np.where(np.asarray(prev_ids) >= vocab_size, unk_id, prev_ids)
    x = params["embedding"][ids]
    pos = np.minimum(np.asarray(positions), config.max_sum_positions - 1)
    return _with_position(x, params, "sum_pos_embedding", pos)


def forward(src: SourceEncoding, target_ext_ids, params: ParameterStore, config: ModelConfig,
            vocab: Vocabulary, *, training: bool = False, rng: np.random.Generator | None = None,
            enc: EncoderOutput | None = None) -> DecoderOutput:
    """Teacher-forced pass predicting every id of ``target_ext_ids``.

    The decoder input at step t is ``[e_{y_{t-1}}; e^s_{t-1}]`` with
    ``y_0 = <s>`` and ``s_0`` = the encoder's global state.
    """
    if enc is None:
        enc = encode(src, params, config, training=training, rng=rng)
    steps = len(target_ext_ids)
    prev = [vocab.bos_id] + list(target_ext_ids[:-1])
    x = _decoder_inputs(prev, np.arange(steps), params, config, len(vocab), vocab.unk_id)
    states = _gru_over(x, params, "dec", h0=enc.global_state)
    probs, alpha_u, alpha_w_bar, gate = _output(states, enc, src, params, config, training, rng)
    return DecoderOutput(probs, states, alpha_u, alpha_w_bar, gate)


def decode_step(states: Tensor, prev_ids, step: int, enc: EncoderOutput, src: SourceEncoding,
                params: ParameterStore, config: ModelConfig, vocab: Vocabulary):
    """Advance ``B`` hypotheses by one step (inference, no dropout).

    ``states`` is ``(B, d)`` holding ``s_{t-1}``; ``prev_ids`` are the
    extended ids of ``y_{t-1}``; ``step`` is t (1-based). Returns the new
    states, the ``(B, |V|+|X|)`` distributions, ``alpha_u``, ``alpha_w_bar``
    and the gate values.
    """
    if step < 1:
        raise ContractError("decode steps are 1-based")
    batch = states.shape[0]
    x = _decoder_inputs(prev_ids, np.full(batch, step - 1), params, config, len(vocab), vocab.unk_id)
    new_states = ad.gru_cell(x, states, _input_weight(params, "dec"), params["dec.w_h"],
                             params["dec.b_x"], params["dec.b_h"])
    probs, alpha_u, alpha_w_bar, gate = _output(new_states, enc, src, params, config, False, None)
    return new_states, probs, alpha_u, alpha_w_bar, gate


@dataclass
class Summarizer:
    """A configured model: config + vocabulary + parameters."""

    config: ModelConfig
    vocab: Vocabulary
    params: ParameterStore
    meta: dict = field(default_factory=dict)

    @classmethod
    def create(cls, config: ModelConfig, vocab: Vocabulary, seed: int = 0,
               pretrained_vectors=None) -> "Summarizer":
        return cls(config, vocab, init_parameters(config, vocab, seed, pretrained_vectors))

    def encode(self, src, **kw) -> EncoderOutput:
        return encode(src, self.params, self.config, **kw)

    def forward(self, src, target_ext_ids, **kw) -> DecoderOutput:
        return forward(src, target_ext_ids, self.params, self.config, self.vocab, **kw)

    # interface used by dialsum.search
    def start(self, src: SourceEncoding):
        with ad.no_grad():
            enc = self.encode(src)
        return enc, enc.global_state.data.reshape(1, -1)

    def step(self, enc: EncoderOutput, src: SourceEncoding, states: np.ndarray, prev_ids, step: int):
        with ad.no_grad():
            new, probs, alpha_u, alpha_w, gate = decode_step(
                Tensor(states), prev_ids, step, enc, src, self.params, self.config, self.vocab)
        return new.data, probs.data, alpha_u.data, alpha_w.data, gate.data.reshape(-1)
