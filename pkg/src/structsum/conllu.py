"""CoNLL-U ingestion for dependency-parsed source sentences."""

from __future__ import annotations

from dataclasses import dataclass


class ConlluError(ValueError):
    """Malformed CoNLL-U input; carries the offending line number."""

    def __init__(self, message, line_no=None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


@dataclass
class ParsedSentence:
    """Tokens with their dependency heads (1-based, 0 = root), relation
    labels, and POS tags."""

    tokens: list
    pos: list
    head: list
    deprel: list

    def __len__(self):
        return len(self.tokens)

    def validate(self, line_no=None):
        n = len(self.tokens)
        if not (len(self.pos) == len(self.head) == len(self.deprel) == n):
            raise ConlluError("column lists have unequal lengths", line_no)
        if n == 0:
            raise ConlluError("empty sentence", line_no)
        roots = [i for i, h in enumerate(self.head) if h == 0]
        if len(roots) != 1:
            raise ConlluError(f"expected exactly one root, found {len(roots)}", line_no)
        for i, h in enumerate(self.head):
            if h < 0 or h > n:
                raise ConlluError(f"head {h} of token {i + 1} out of range", line_no)
        # walk each token to the root; revisiting a token means a cycle
        for start in range(n):
            seen = set()
            cur = start
            while self.head[cur] != 0:
                if cur in seen:
                    raise ConlluError(f"cycle through token {start + 1}", line_no)
                seen.add(cur)
                cur = self.head[cur] - 1
        return self

    def children(self):
        """Child positions (0-based) grouped by parent position."""
        out = [[] for _ in self.tokens]
        for i, h in enumerate(self.head):
            if h != 0:
                out[h - 1].append(i)
        return out

    def root(self):
        return self.head.index(0)

    def edges(self):
        """(parent, child, relation) triples with 0-based positions."""
        return [
            (h - 1, i, rel)
            for i, (h, rel) in enumerate(zip(self.head, self.deprel))
            if h != 0
        ]


def parse_conllu(stream, pos_column="xpos"):
    """Read CoNLL-U text into ``ParsedSentence`` objects.

    Ten tab-separated columns per token line; blank lines separate
    sentences; ``#`` lines are comments.  Multiword-token ranges and empty
    nodes are skipped.  ``pos_column`` selects UPOS or XPOS for the POS
    field.
    """
    if pos_column not in ("upos", "xpos"):
        raise ValueError(f"pos_column must be 'upos' or 'xpos', got {pos_column!r}")
    if isinstance(stream, str):
        lines = stream.splitlines()
    else:
        lines = [line.rstrip("\n") for line in stream]

    sentences = []
    tokens, pos, head, deprel = [], [], [], []
    first_line = None

    def flush(line_no):
        nonlocal tokens, pos, head, deprel, first_line
        if tokens:
            sent = ParsedSentence(tokens, pos, head, deprel).validate(line_no)
            sentences.append(sent)
        tokens, pos, head, deprel = [], [], [], []
        first_line = None

    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            flush(first_line)
            continue
        if line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != 10:
            raise ConlluError(f"expected 10 columns, found {len(cols)}", line_no)
        tok_id = cols[0]
        if "-" in tok_id or "." in tok_id:
            continue  # multiword range / empty node
        try:
            int(tok_id)
        except ValueError:
            raise ConlluError(f"non-integer token id {tok_id!r}", line_no) from None
        try:
            h = int(cols[6])
        except ValueError:
            raise ConlluError(f"non-integer HEAD {cols[6]!r}", line_no) from None
        if first_line is None:
            first_line = line_no
        tokens.append(cols[1])
        pos.append(cols[4] if pos_column == "xpos" else cols[3])
        head.append(h)
        deprel.append(cols[7])
    flush(first_line)
    return sentences


def parse_conllu_file(path, pos_column="xpos"):
    with open(path, encoding="utf-8") as fh:
        return parse_conllu(fh, pos_column=pos_column)
