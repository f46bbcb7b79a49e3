"""Per-token structural labels derived from a dependency parse.

Six categories per token: tree depth, incoming relation label, number of
outgoing edges, POS tag, clipped absolute position, and the relative
position discretized into ten right-closed buckets.
"""

from __future__ import annotations

from dataclasses import dataclass

CATEGORIES = ("depth", "in_label", "out_degree", "pos", "abs_pos", "rel_pos")


@dataclass
class FeatureConfig:
    max_depth: int = 20
    max_abs_pos: int = 100
    buckets: int = 10


@dataclass
class StructuralLabels:
    depth: list
    in_label: list
    out_degree: list
    pos: list
    abs_pos: list
    rel_pos: list

    def __len__(self):
        return len(self.depth)

    def category(self, name):
        return getattr(self, name)

    def rows(self):
        """Label values per token in CATEGORIES order, stringified."""
        return [
            [str(self.category(cat)[i]) for cat in CATEGORIES]
            for i in range(len(self))
        ]


def relative_position_bucket(position, length, buckets=10):
    """Bucket b with (b-1)/buckets < position/length <= b/buckets.

    ``position`` is 1-based; boundaries are right-closed, so a ratio of
    exactly 0.5 with ten buckets falls in bucket 5.
    """
    if not 1 <= position <= length:
        raise ValueError(f"position {position} outside sentence of length {length}")
    # ceil(buckets * position / length) in exact integer arithmetic
    return -((-buckets * position) // length)


def extract_structural_labels(sentence, config=None):
    config = config or FeatureConfig()
    n = len(sentence)
    depth = [min(_depth_of(sentence, i), config.max_depth) for i in range(n)]
    out_degree = [len(kids) for kids in sentence.children()]
    abs_pos = [min(i + 1, config.max_abs_pos) for i in range(n)]
    rel_pos = [relative_position_bucket(i + 1, n, config.buckets) for i in range(n)]
    return StructuralLabels(
        depth=depth,
        in_label=list(sentence.deprel),
        out_degree=out_degree,
        pos=list(sentence.pos),
        abs_pos=abs_pos,
        rel_pos=rel_pos,
    )


def _depth_of(sentence, i):
    d = 0
    while sentence.head[i] != 0:
        i = sentence.head[i] - 1
        d += 1
    return d
