"""Vocabularies, instance encoding, and corpus pruning."""

from __future__ import annotations

import hashlib
import json
import os
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .features import CATEGORIES, FeatureConfig, extract_structural_labels

PAD, UNK, BOS, EOS = "<pad>", "<unk>", "<s>", "</s>"
RESERVED = (PAD, UNK, BOS, EOS)
PAD_ID, UNK_ID, BOS_ID, EOS_ID = 0, 1, 2, 3

# small function-word list used only by the prune overlap rule
STOPWORDS = frozenset(
    """a an the and or but if then than that this these those of in on at to for
    from by with without as is are was were be been being am do does did has have
    had will would can could may might must shall should not no nor so such it its
    he she they we you i his her their our your them him us me &apos;s &quot; ``
    '' . , ; : ! ? - -- ( )""".split()
)


class CorpusError(ValueError):
    pass


def _ranked(counter, first_seen):
    """Tokens by descending frequency; ties broken by first occurrence."""
    return sorted(counter, key=lambda t: (-counter[t], first_seen[t]))


class Vocabulary:
    """Token/index maps for words and the six structural label categories.

    The word list ranks input tokens by frequency after four reserved
    entries; the output vocabulary is the prefix of the first ``n_output``
    entries, so an id below ``n_output`` is generatable.  Every structural
    category map starts with an unknown slot.
    """

    def __init__(self, words, n_output, struct_labels):
        self.words = list(words)
        self.n_output = int(n_output)
        self.word_index = {w: i for i, w in enumerate(self.words)}
        if len(self.word_index) != len(self.words):
            raise CorpusError("duplicate tokens in word vocabulary")
        if not 4 <= self.n_output <= len(self.words):
            raise CorpusError("output vocabulary must lie inside the input vocabulary")
        self.struct_labels = {cat: list(struct_labels[cat]) for cat in CATEGORIES}
        self.struct_index = {
            cat: {lab: i for i, lab in enumerate(labs)}
            for cat, labs in self.struct_labels.items()
        }

    @property
    def n_input(self):
        return len(self.words)

    def word_id(self, token):
        return self.word_index.get(token, UNK_ID)

    def in_output(self, word_id):
        return 0 <= word_id < self.n_output

    def struct_id(self, category, label):
        return self.struct_index[category].get(str(label), 0)

    def struct_sizes(self):
        return tuple(len(self.struct_labels[cat]) for cat in CATEGORIES)

    def surface(self, word_id):
        return self.words[word_id]

    # --- serialization: one token per line, rank order ---

    def save(self, directory):
        os.makedirs(directory, exist_ok=True)
        with open(os.path.join(directory, "words.txt"), "w", encoding="utf-8") as fh:
            fh.write("\n".join(self.words) + "\n")
        for cat in CATEGORIES:
            path = os.path.join(directory, f"struct_{cat}.txt")
            with open(path, "w", encoding="utf-8") as fh:
                fh.write("\n".join(self.struct_labels[cat]) + "\n")
        meta = {"n_output": self.n_output}
        with open(os.path.join(directory, "vocab.json"), "w", encoding="utf-8") as fh:
            json.dump(meta, fh, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, directory):
        with open(os.path.join(directory, "words.txt"), encoding="utf-8") as fh:
            words = fh.read().splitlines()
        struct = {}
        for cat in CATEGORIES:
            with open(os.path.join(directory, f"struct_{cat}.txt"), encoding="utf-8") as fh:
                struct[cat] = fh.read().splitlines()
        with open(os.path.join(directory, "vocab.json"), encoding="utf-8") as fh:
            meta = json.load(fh)
        return cls(words, meta["n_output"], struct)

    def sha256(self):
        h = hashlib.sha256()
        h.update("\n".join(self.words).encode("utf-8"))
        h.update(str(self.n_output).encode())
        for cat in CATEGORIES:
            h.update(("\n".join(self.struct_labels[cat]) + cat).encode("utf-8"))
        return h.hexdigest()


def build_vocabularies(pairs, v_in, v_out, labels=None):
    """Frequency-ranked vocabulary over source and summary text.

    ``pairs`` yields (source_tokens, summary_tokens).  ``v_in``/``v_out``
    cap the number of non-reserved word entries.  ``labels`` optionally
    yields a ``StructuralLabels`` per pair for the category maps.
    """
    if v_out > v_in:
        raise CorpusError(f"v_out ({v_out}) must not exceed v_in ({v_in})")
    counts = Counter()
    first_seen = {}
    struct_counts = {cat: Counter() for cat in CATEGORIES}
    struct_first = {cat: {} for cat in CATEGORIES}
    n_pairs = 0
    labels = labels or []
    for src, tgt in pairs:
        for tok in list(src) + list(tgt):
            counts[tok] += 1
            first_seen.setdefault(tok, len(first_seen))
        n_pairs += 1
    if n_pairs == 0:
        raise CorpusError("cannot build vocabularies from an empty corpus")
    for lab in labels:
        for row in lab.rows():
            for cat, value in zip(CATEGORIES, row):
                struct_counts[cat][value] += 1
                struct_first[cat].setdefault(value, len(struct_first[cat]))

    ranked = _ranked(counts, first_seen)
    words = list(RESERVED) + ranked[:v_in]
    n_output = len(RESERVED) + min(v_out, len(ranked))
    struct_labels = {
        cat: [UNK] + _ranked(struct_counts[cat], struct_first[cat])
        for cat in CATEGORIES
    }
    return Vocabulary(words, n_output, struct_labels)


@dataclass
class PruneConfig:
    """Filters applied to train/valid pairs (never to test data)."""

    min_src_len: int = 5
    max_src_len: int = 100
    min_tgt_len: int = 2
    max_tgt_len: int = 50
    min_overlap: int = 1
    enabled: bool = True


def prune_pair(src_tokens, tgt_tokens, rules=None):
    """True when the pair should be kept for training."""
    rules = rules or PruneConfig()
    if not rules.enabled:
        return True
    if list(src_tokens) == list(tgt_tokens):
        return False
    if not rules.min_src_len <= len(src_tokens) <= rules.max_src_len:
        return False
    if not rules.min_tgt_len <= len(tgt_tokens) <= rules.max_tgt_len:
        return False
    if rules.min_overlap > 0:
        src_content = {t.lower() for t in src_tokens} - STOPWORDS
        tgt_content = {t.lower() for t in tgt_tokens} - STOPWORDS
        if len(src_content & tgt_content) < rules.min_overlap:
            return False
    return True


@dataclass
class EncodedPair:
    """One index-encoded (source, summary) instance."""

    src_ids: np.ndarray          # (S,) input-vocab ids, unknowns mapped
    src_struct_ids: np.ndarray   # (6, S) structural label ids
    src_surface: list            # surface forms kept for the copy path
    tgt_ids: np.ndarray          # (T,) input-vocab ids of summary tokens
    tgt_copy_positions: list     # per target token: source positions with equal surface
    parent_index: np.ndarray     # (S,) 1-based head position, 0 = root

    @property
    def src_len(self):
        return len(self.src_surface)

    @property
    def tgt_len(self):
        return len(self.tgt_ids)

    def to_json(self):
        return json.dumps(
            {
                "src_ids": self.src_ids.tolist(),
                "struct": self.src_struct_ids.tolist(),
                "surface": self.src_surface,
                "tgt_ids": self.tgt_ids.tolist(),
                "copy": self.tgt_copy_positions,
                "parent": self.parent_index.tolist(),
            },
            sort_keys=True,
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, line):
        d = json.loads(line)
        return cls(
            src_ids=np.asarray(d["src_ids"], dtype=np.intp),
            src_struct_ids=np.asarray(d["struct"], dtype=np.intp),
            src_surface=list(d["surface"]),
            tgt_ids=np.asarray(d["tgt_ids"], dtype=np.intp),
            tgt_copy_positions=[list(p) for p in d["copy"]],
            parent_index=np.asarray(d["parent"], dtype=np.intp),
        )


def encode_pair(src_tokens, tgt_tokens, vocab, parse=None, feature_config=None):
    """Encode one pair against a vocabulary.

    When ``parse`` (a ``ParsedSentence`` over the same tokens) is given,
    structural label ids and head positions are filled in; otherwise they
    are zeroed and only architectures without structural features can
    consume the pair.
    """
    src_tokens = list(src_tokens)
    tgt_tokens = list(tgt_tokens)
    if parse is not None:
        if list(parse.tokens) != src_tokens:
            raise CorpusError("parse tokens do not match source tokens")
        labels = extract_structural_labels(parse, feature_config or FeatureConfig())
        struct = np.array(
            [[vocab.struct_id(cat, v) for v in labels.category(cat)] for cat in CATEGORIES],
            dtype=np.intp,
        )
        parent = np.asarray(parse.head, dtype=np.intp)
    else:
        struct = np.zeros((len(CATEGORIES), len(src_tokens)), dtype=np.intp)
        parent = np.zeros(len(src_tokens), dtype=np.intp)

    positions = {}
    for i, tok in enumerate(src_tokens):
        positions.setdefault(tok, []).append(i)
    return EncodedPair(
        src_ids=np.array([vocab.word_id(t) for t in src_tokens], dtype=np.intp),
        src_struct_ids=struct,
        src_surface=src_tokens,
        tgt_ids=np.array([vocab.word_id(t) for t in tgt_tokens], dtype=np.intp),
        tgt_copy_positions=[positions.get(t, []) for t in tgt_tokens],
        parent_index=parent,
    )


def decode_ids(ids, vocab):
    """Surface forms for a sequence of input-vocabulary ids."""
    return [vocab.surface(i) for i in ids]
