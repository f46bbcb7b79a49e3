"""Encoder-decoder summarization models with copy attention.

Five architectures share one skeleton and differ only in where structural
signals enter:

* ``baseline``           - copy-attention encoder-decoder, no structure.
* ``struct_input``       - structural embeddings concatenated to the word
                           embeddings before encoding.
* ``struct_hidden``      - structural embeddings concatenated to the encoder
                           hidden states after encoding.
* ``two_way_word``       - a second, structural attention over raw
                           word+structure vectors, mixed into the semantic
                           attention with a trained coefficient.
* ``two_way_relation``   - the structural attention scores dependency edges
                           (token plus parent vectors); edge salience is
                           pushed forward along the parse and mixed in.

Vectors are rows: activations have shape (batch, dim) and weight matrices
(in_dim, out_dim).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .features import CATEGORIES

ARCHITECTURES = (
    "baseline",
    "struct_input",
    "struct_hidden",
    "two_way_word",
    "two_way_relation",
)

_STRUCT_ARCHS = frozenset(ARCHITECTURES[1:])
_TWO_WAY_ARCHS = frozenset(("two_way_word", "two_way_relation"))

# softplus(x) = 1  =>  x = log(e - 1); the mixing coefficient starts at 1
_MIX_RAW_INIT = math.log(math.e - 1.0)


class ModelError(ValueError):
    pass


@dataclass
class ModelConfig:
    architecture: str = "baseline"
    word_dim: int = 100
    struct_dim: int = 16
    hidden_dim: int = 256
    v_in: int = 70004
    v_out: int = 5004
    max_src_len: int = 100
    max_tgt_len: int = 50
    struct_sizes: tuple = ()
    share_embeddings: bool = True

    def validate(self):
        if self.architecture not in ARCHITECTURES:
            raise ModelError(f"unknown architecture {self.architecture!r}")
        for name in ("word_dim", "struct_dim", "hidden_dim", "v_in", "v_out",
                     "max_src_len", "max_tgt_len"):
            if getattr(self, name) <= 0:
                raise ModelError(f"{name} must be positive")
        if self.v_out > self.v_in:
            raise ModelError("v_out cannot exceed v_in")
        if self.uses_struct and len(self.struct_sizes) != len(CATEGORIES):
            raise ModelError(
                f"architecture {self.architecture!r} needs {len(CATEGORIES)} "
                f"structural table sizes, got {self.struct_sizes!r}"
            )
        return self

    @property
    def uses_struct(self):
        return self.architecture in _STRUCT_ARCHS

    @property
    def uses_two_way(self):
        return self.architecture in _TWO_WAY_ARCHS

    @property
    def struct_total(self):
        return self.struct_dim * len(CATEGORIES)

    @property
    def encoder_input_dim(self):
        if self.architecture == "struct_input":
            return self.word_dim + self.struct_total
        return self.word_dim

    @property
    def encoder_dim(self):
        base = 2 * self.hidden_dim
        if self.architecture == "struct_hidden":
            return base + self.struct_total
        return base

    @property
    def primitive_dim(self):
        # raw word+structure vector compared against the decoder state
        return self.struct_total + self.word_dim

    @property
    def struct_attn_input_dim(self):
        if self.architecture == "two_way_relation":
            return 2 * self.primitive_dim
        return self.primitive_dim

    def to_dict(self):
        d = self.__dict__.copy()
        d["struct_sizes"] = list(self.struct_sizes)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["struct_sizes"] = tuple(d.get("struct_sizes", ()))
        return cls(**d).validate()


def expected_shapes(config):
    """Shape of every trainable tensor for this architecture."""
    h = config.hidden_dim
    enc = config.encoder_dim
    shapes = {
        "word_emb": (config.v_in, config.word_dim),
        "enc_l1f_w": (config.encoder_input_dim + h, 4 * h),
        "enc_l1f_b": (4 * h,),
        "enc_l1b_w": (config.encoder_input_dim + h, 4 * h),
        "enc_l1b_b": (4 * h,),
        "enc_l2f_w": (2 * h + h, 4 * h),
        "enc_l2f_b": (4 * h,),
        "enc_l2b_w": (2 * h + h, 4 * h),
        "enc_l2b_b": (4 * h,),
        "bridge_w": (enc, h),
        "bridge_b": (h,),
        "dec_w": (config.word_dim + h, 4 * h),
        "dec_b": (4 * h,),
        "att_w": (h + enc, h),
        "att_b": (h,),
        "att_v": (h,),
        "out_w": (h + enc, h),
        "out_b": (h,),
        "vocab_w": (h, config.v_out),
        "vocab_b": (config.v_out,),
        "switch_w": (h + enc + config.word_dim, 1),
        "switch_b": (1,),
    }
    if not config.share_embeddings:
        shapes["tgt_emb"] = (config.v_in, config.word_dim)
    if config.uses_struct:
        for cat, size in zip(CATEGORIES, config.struct_sizes):
            shapes[f"struct_emb_{cat}"] = (size, config.struct_dim)
    if config.uses_two_way:
        shapes["sattn_w"] = (config.struct_attn_input_dim + h, h)
        shapes["sattn_b"] = (h,)
        shapes["sattn_u"] = (h,)
        shapes["mix_raw"] = ()
    return shapes


class ModelParams:
    """Named trainable tensors for one architecture."""

    def __init__(self, config, tensors):
        self.config = config
        self.tensors = dict(tensors)
        self.mix_override = None

    @classmethod
    def initialize(cls, config, rng=None):
        """Gaussian init with variance 2/(n_in+n_out); biases zero except the
        LSTM forget gates, which start at one."""
        config.validate()
        rng = rng or np.random.default_rng(0)
        dtype = ad.default_dtype()
        tensors = {}
        for name, shape in expected_shapes(config).items():
            if name == "mix_raw":
                data = np.array(_MIX_RAW_INIT, dtype=dtype)
            elif len(shape) == 2:
                sigma = math.sqrt(2.0 / (shape[0] + shape[1]))
                data = rng.normal(0.0, sigma, size=shape).astype(dtype)
            else:
                data = np.zeros(shape, dtype=dtype)
            tensors[name] = ad.parameter(data, name=name)
        h = config.hidden_dim
        for name in ("enc_l1f_b", "enc_l1b_b", "enc_l2f_b", "enc_l2b_b", "dec_b"):
            tensors[name].data[h : 2 * h] = 1.0
        return cls(config, tensors)

    def __getitem__(self, name):
        return self.tensors[name]

    def __contains__(self, name):
        return name in self.tensors

    def named(self):
        return sorted(self.tensors.items())

    def audit(self):
        """Verify every tensor matches its derived shape; raises on drift."""
        expected = expected_shapes(self.config)
        extra = set(self.tensors) - set(expected)
        missing = set(expected) - set(self.tensors)
        if extra or missing:
            raise ModelError(f"parameter audit: extra={sorted(extra)} missing={sorted(missing)}")
        for name, shape in expected.items():
            actual = self.tensors[name].shape
            if tuple(actual) != tuple(shape):
                raise ModelError(f"parameter audit: {name} has shape {actual}, expected {shape}")
        return True

    def embedding_table(self, target=False):
        if target and not self.config.share_embeddings:
            return self.tensors["tgt_emb"]
        return self.tensors["word_emb"]

    def mix_coefficient(self):
        """Positive mixing weight for the two-way combination."""
        if self.mix_override is not None:
            return ad.constant(np.asarray(self.mix_override, dtype=ad.default_dtype()))
        return ad.softplus(self.tensors["mix_raw"])

    def freeze_mix(self, value):
        """Pin the mixing coefficient to a constant (None restores training)."""
        self.mix_override = value

    def zero_grad(self):
        for t in self.tensors.values():
            t.zero_grad()

    def copy(self):
        clone = ModelParams(
            self.config,
            {n: ad.parameter(t.data.copy(), name=n) for n, t in self.tensors.items()},
        )
        clone.mix_override = self.mix_override
        return clone

    def load_arrays(self, arrays):
        for name, t in self.tensors.items():
            t.data[...] = arrays[name]

    # --- checkpoint file: JSON header line + raw little-endian arrays ---

    def save(self, path, extra=None):
        dtype = "<f4" if ad.default_dtype() is np.float32 else "<f8"
        manifest = [
            {"name": n, "shape": list(t.shape), "dtype": dtype} for n, t in self.named()
        ]
        header = {
            "config": self.config.to_dict(),
            "params": manifest,
            "extra": extra or {},
        }
        with open(path, "wb") as fh:
            fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
            fh.write(b"\n")
            for _, t in self.named():
                fh.write(np.ascontiguousarray(t.data, dtype=dtype).tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            header = json.loads(fh.readline().decode("utf-8"))
            config = ModelConfig.from_dict(header["config"])
            tensors = {}
            for entry in header["params"]:
                shape = tuple(entry["shape"])
                count = int(np.prod(shape)) if shape else 1
                raw = fh.read(count * np.dtype(entry["dtype"]).itemsize)
                arr = np.frombuffer(raw, dtype=entry["dtype"]).reshape(shape).copy()
                tensors[entry["name"]] = ad.parameter(arr, name=entry["name"])
        params = cls(config, tensors)
        params.audit()
        return params, header.get("extra", {})


# ---------------------------------------------------------------------------
# forward computation


def lstm_cell(x, h_prev, c_prev, w, b, hidden):
    """One step of a standard LSTM (input, forget, output, candidate gates)."""
    z = ad.add(ad.matmul(ad.concat([x, h_prev], axis=1), w), b)
    i = ad.sigmoid(z[:, :hidden])
    f = ad.sigmoid(z[:, hidden : 2 * hidden])
    o = ad.sigmoid(z[:, 2 * hidden : 3 * hidden])
    g = ad.tanh(z[:, 3 * hidden :])
    c = ad.add(ad.mul(f, c_prev), ad.mul(i, g))
    h = ad.mul(o, ad.tanh(c))
    return h, c


def _run_lstm(inputs, mask_cols, w, b, hidden, reverse=False):
    """Unrolled LSTM over a padded batch.

    ``mask_cols[i]`` is a (B, 1) constant; on padded steps the previous
    state is carried through unchanged so padding never leaks into real
    positions (this is what makes the reversed direction start clean).
    """
    B = inputs[0].shape[0]
    zeros = ad.constant(np.zeros((B, hidden), dtype=ad.default_dtype()))
    h, c = zeros, zeros
    outputs = [None] * len(inputs)
    order = range(len(inputs) - 1, -1, -1) if reverse else range(len(inputs))
    for i in order:
        h_new, c_new = lstm_cell(inputs[i], h, c, w, b, hidden)
        m = mask_cols[i]
        keep = ad.sub(1.0, m)
        h = ad.add(ad.mul(m, h_new), ad.mul(keep, h))
        c = ad.add(ad.mul(m, c_new), ad.mul(keep, c))
        outputs[i] = h
    return outputs


@dataclass
class EncoderState:
    """Everything the decoder needs about one encoded batch."""

    hs: list                 # per-position encoder rows, (B, enc_dim) each
    h0: ad.Tensor            # initial decoder hidden state (B, H)
    struct_vecs: list        # per-position structural vectors or None
    g: list                  # per-position primitive reps (two-way) or None
    att_enc: list            # per-position semantic-attention projections
    sattn_enc: list          # per-position structural-attention projections or None
    src_mask: np.ndarray     # (B, S) 0/1
    mask_cols: list          # (B, 1) constants per position
    batch: object            # the batch this state was built from
    src_len: np.ndarray      # (B,)

    @property
    def n_positions(self):
        return len(self.hs)


def _struct_vector(params, batch, position):
    parts = []
    for cat in CATEGORIES:
        table = params[f"struct_emb_{cat}"]
        ids = batch.struct_ids[CATEGORIES.index(cat), :, position]
        parts.append(ad.embedding_lookup(table, ids))
    return ad.concat(parts, axis=1)


def encode(batch, params, config=None):
    """Run the bidirectional encoder over a padded batch.

    Returns an ``EncoderState`` with one row per source position, the
    bridged initial decoder state (tanh of an affine map of the mean
    encoder row), and for two-way architectures the raw word+structure
    vectors used by the structural attention.
    """
    config = config or params.config
    B, S = batch.src_ids.shape
    if S < 1:
        raise ModelError("encode: empty source")
    H = config.hidden_dim
    dtype = ad.default_dtype()
    mask = batch.src_mask.astype(dtype)
    mask_cols = [ad.constant(mask[:, i : i + 1]) for i in range(S)]

    table = params.embedding_table()
    words = [ad.embedding_lookup(table, batch.src_ids[:, i]) for i in range(S)]
    struct_vecs = None
    if config.uses_struct:
        struct_vecs = [_struct_vector(params, batch, i) for i in range(S)]

    if config.architecture == "struct_input":
        layer1_in = [ad.concat([w, s], axis=1) for w, s in zip(words, struct_vecs)]
    else:
        layer1_in = words

    f1 = _run_lstm(layer1_in, mask_cols, params["enc_l1f_w"], params["enc_l1f_b"], H)
    b1 = _run_lstm(layer1_in, mask_cols, params["enc_l1b_w"], params["enc_l1b_b"], H, reverse=True)
    layer2_in = [ad.concat([f, b], axis=1) for f, b in zip(f1, b1)]
    f2 = _run_lstm(layer2_in, mask_cols, params["enc_l2f_w"], params["enc_l2f_b"], H)
    b2 = _run_lstm(layer2_in, mask_cols, params["enc_l2b_w"], params["enc_l2b_b"], H, reverse=True)
    hs = [ad.concat([f, b], axis=1) for f, b in zip(f2, b2)]
    if config.architecture == "struct_hidden":
        hs = [ad.concat([h, s], axis=1) for h, s in zip(hs, struct_vecs)]

    inv_len = ad.constant((1.0 / batch.src_len.astype(dtype))[:, None])
    acc = ad.mul(hs[0], mask_cols[0])
    for i in range(1, S):
        acc = ad.add(acc, ad.mul(hs[i], mask_cols[i]))
    h0 = ad.tanh(ad.add(ad.matmul(ad.mul(acc, inv_len), params["bridge_w"]), params["bridge_b"]))

    # per-position projections that do not depend on the decoder step
    att_w, att_b = params["att_w"], params["att_b"]
    att_enc = [ad.add(ad.matmul(h, att_w[H:, :]), att_b) for h in hs]

    g = sattn_enc = None
    if config.uses_two_way:
        g = [ad.concat([s, w], axis=1) for s, w in zip(struct_vecs, words)]
        if config.architecture == "two_way_relation":
            flat = ad.concat(g, axis=0)  # position-major (S*B, gd)
            parent_rows = np.empty((S, B), dtype=np.intp)
            has_parent = np.empty((S, B), dtype=dtype)
            for i in range(S):
                heads = batch.parent[:, i]
                parent_rows[i] = np.where(heads > 0, heads - 1, 0) * B + np.arange(B)
                has_parent[i] = (heads > 0).astype(dtype)
            edge_in = [
                ad.concat([g[i], ad.mul(flat[parent_rows[i]], ad.constant(has_parent[i][:, None]))], axis=1)
                for i in range(S)
            ]
        else:
            edge_in = g
        gd = config.struct_attn_input_dim
        sattn_enc = [
            ad.add(ad.matmul(e, params["sattn_w"][:gd, :]), params["sattn_b"]) for e in edge_in
        ]

    return EncoderState(
        hs=hs,
        h0=h0,
        struct_vecs=struct_vecs,
        g=g,
        att_enc=att_enc,
        sattn_enc=sattn_enc,
        src_mask=mask,
        mask_cols=mask_cols,
        batch=batch,
        src_len=batch.src_len,
    )


@dataclass
class DecoderState:
    h: ad.Tensor             # (B, H)
    c: ad.Tensor             # (B, H)
    step: int                # 1-based index of the next step
    semantic_history: ad.Tensor   # cumulative semantic attention, (B, S)
    used_history: ad.Tensor       # cumulative attention used for copying, (B, S)


def init_decoder_state(enc):
    B = enc.h0.shape[0]
    S = enc.n_positions
    dtype = ad.default_dtype()
    zero_h = ad.constant(np.zeros((B, enc.h0.shape[1]), dtype=dtype))
    zero_att = ad.constant(np.zeros((B, S), dtype=dtype))
    return DecoderState(
        h=enc.h0, c=zero_h, step=1, semantic_history=zero_att, used_history=zero_att
    )


@dataclass
class StepState:
    """All per-step quantities exposed for inspection and regularization."""

    hidden: ad.Tensor
    semantic: ad.Tensor          # attention from decoder/encoder interaction
    structural: ad.Tensor | None # attention from raw word+structure vectors
    relation: ad.Tensor | None   # edge salience pushed to later positions
    mixed: ad.Tensor | None      # combined attention (two-way only)
    used: ad.Tensor              # the attention row that weighted the context
    history: ad.Tensor           # cumulative semantic attention before this step
    context: ad.Tensor
    p_gen: ad.Tensor             # (B, 1) in (0, 1)
    dist: ad.Tensor              # (B, batch-vocab size), rows sum to 1


def _attention_scores(dec_proj, enc_projs, v, mask):
    cols = [ad.matmul(ad.tanh(ad.add(dec_proj, e)), v[:, None]) for e in enc_projs]
    scores = ad.concat(cols, axis=1)
    return ad.softmax(scores, mask=mask)


def semantic_attention(dec_hidden, enc, params):
    """Attention over source positions from decoder/encoder state interaction."""
    H = params.config.hidden_dim
    dec_proj = ad.matmul(dec_hidden, params["att_w"][:H, :])
    return _attention_scores(dec_proj, enc.att_enc, params["att_v"], enc.src_mask)


def structural_attention(dec_hidden, enc, params):
    """Structural attention over raw representations (two-way only)."""
    config = params.config
    if not config.uses_two_way:
        raise ModelError(
            f"structural attention is undefined for architecture {config.architecture!r}"
        )
    gd = config.struct_attn_input_dim
    dec_proj = ad.matmul(dec_hidden, params["sattn_w"][gd:, :])
    return _attention_scores(dec_proj, enc.sattn_enc, params["sattn_u"], enc.src_mask)


def combine_two_way_word(semantic, structural, mix):
    """Mix the two attention rows and renormalize: (a + eps*b) / sum."""
    num = ad.add(semantic, ad.mul(mix, structural))
    den = ad.tensor_sum(num, axis=1, keepdims=True)
    if np.any(den.data <= 0):
        raise ModelError("two-way combination: non-positive normalizer")
    return ad.div(num, den)


def relation_salience(semantic_history, structural, edges):
    """Push edge salience onto later endpoints.

    For every dependency edge between positions j < i, the accumulated
    attention already spent on j is multiplied by the salience of the edge
    (stored on the edge's child endpoint) and added at position i.
    """
    ej, esal, etgt, emask = edges
    S = semantic_history.shape[1]
    weights = ad.mul(
        ad.mul(ad.gather_cols(semantic_history, ej), ad.gather_cols(structural, esal)),
        ad.constant(emask),
    )
    return ad.scatter_cols(weights, etgt, S)


def combine_two_way_relation(semantic, semantic_history, structural, edges, mix):
    """Relation-aware mixing: (a + eps*gamma) / sum, gamma from edge salience."""
    gamma = relation_salience(semantic_history, structural, edges)
    num = ad.add(semantic, ad.mul(mix, gamma))
    den = ad.tensor_sum(num, axis=1, keepdims=True)
    if np.any(den.data <= 0):
        raise ModelError("two-way combination: non-positive normalizer")
    return gamma, ad.div(num, den)


def combine_copy_distribution(p_gen, p_vocab, attention, slots, width):
    """Blend generation and copy probabilities over the batch vocabulary.

    ``slots`` maps each source position to its batch-vocabulary index; a
    word's copy probability is the attention mass summed over all its
    occurrences.  Output rows sum to one whenever ``attention`` rows do.
    """
    B, v_out = p_vocab.shape
    if width < v_out:
        raise ModelError(f"batch vocabulary ({width}) smaller than output vocabulary ({v_out})")
    gen = ad.mul(p_gen, p_vocab)
    if width > v_out:
        pad = ad.constant(np.zeros((B, width - v_out), dtype=ad.default_dtype()))
        gen = ad.concat([gen, pad], axis=1)
    copy = ad.scatter_cols(ad.mul(ad.sub(1.0, p_gen), attention), slots, width)
    return ad.add(gen, copy)


def decode_step(prev_ids, state, enc, params, config=None, p_gen_override=None):
    """Advance the decoder one step.

    ``prev_ids`` holds the input-vocabulary ids of the previously emitted
    (or gold, under teacher forcing) words.  Returns the per-step
    quantities and the successor state.  ``p_gen_override`` pins the
    generation switch, which turns off the copy path at 1.0.
    """
    config = config or params.config
    batch = enc.batch
    y_emb = ad.embedding_lookup(params.embedding_table(target=True), prev_ids)
    h, c = lstm_cell(y_emb, state.h, state.c, params["dec_w"], params["dec_b"], config.hidden_dim)

    semantic = semantic_attention(h, enc, params)
    structural = relation = mixed = None
    if config.architecture == "two_way_word":
        structural = structural_attention(h, enc, params)
        mixed = combine_two_way_word(semantic, structural, params.mix_coefficient())
        used = mixed
    elif config.architecture == "two_way_relation":
        structural = structural_attention(h, enc, params)
        if state.step == 1:
            # no history yet: the mix contributes nothing and the
            # renormalizer is exactly one, so the semantic row passes through
            S = semantic.shape[1]
            relation = ad.constant(np.zeros((semantic.shape[0], S), dtype=ad.default_dtype()))
            mixed = semantic
        else:
            relation, mixed = combine_two_way_relation(
                semantic, state.semantic_history, structural, batch.edges, params.mix_coefficient()
            )
        used = mixed
    else:
        used = semantic

    context = ad.mul(used[:, 0:1], enc.hs[0])
    for i in range(1, enc.n_positions):
        context = ad.add(context, ad.mul(used[:, i : i + 1], enc.hs[i]))

    merged = ad.tanh(ad.add(ad.matmul(ad.concat([h, context], axis=1), params["out_w"]), params["out_b"]))
    p_vocab = ad.softmax(ad.add(ad.matmul(merged, params["vocab_w"]), params["vocab_b"]))
    p_gen = ad.sigmoid(
        ad.add(ad.matmul(ad.concat([h, context, y_emb], axis=1), params["switch_w"]), params["switch_b"])
    )
    if p_gen_override is not None:
        p_gen = ad.constant(np.full_like(p_gen.data, p_gen_override))
    dist = combine_copy_distribution(
        p_gen, p_vocab, used, batch.slots, batch.batch_vocab.size
    )

    step_state = StepState(
        hidden=h,
        semantic=semantic,
        structural=structural,
        relation=relation,
        mixed=mixed,
        used=used,
        history=state.semantic_history,
        context=context,
        p_gen=p_gen,
        dist=dist,
    )
    next_state = DecoderState(
        h=h,
        c=c,
        step=state.step + 1,
        semantic_history=ad.add(state.semantic_history, semantic),
        used_history=ad.add(state.used_history, used),
    )
    return step_state, next_state
