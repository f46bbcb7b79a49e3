import numpy as np
import pytest

# Dependency-parsed rendering of the drunk-father example sentence; "had" is
# the root at position 9 of 15 with three children and tag VBD, which pins
# every structural-label category in one place.
FIGURE_CONLLU = """\
# sent_id = figure-example
1\talaska\t_\tPROPN\tNNP\t_\t2\tcompound\t_\t_
2\tfather\t_\tNOUN\tNN\t_\t9\tnsubj\t_\t_
3\twho\t_\tPRON\tWP\t_\t6\tnsubj\t_\t_
4\twas\t_\tAUX\tVBD\t_\t6\tcop\t_\t_
5\ttoo\t_\tADV\tRB\t_\t6\tadvmod\t_\t_
6\tdrunk\t_\tADJ\tJJ\t_\t2\tacl:relcl\t_\t_
7\tto\t_\tPART\tTO\t_\t8\tmark\t_\t_
8\tdrive\t_\tVERB\tVB\t_\t6\txcomp\t_\t_
9\thad\t_\tVERB\tVBD\t_\t0\troot\t_\t_
10\this\t_\tPRON\tPRP$\t_\t12\tnmod:poss\t_\t_
11\t11-year-old\t_\tADJ\tJJ\t_\t12\tamod\t_\t_
12\tson\t_\tNOUN\tNN\t_\t9\tdobj\t_\t_
13\ttake\t_\tVERB\tVB\t_\t9\tccomp\t_\t_
14\tthe\t_\tDET\tDT\t_\t15\tdet\t_\t_
15\twheel\t_\tNOUN\tNN\t_\t13\tdobj\t_\t_
"""


@pytest.fixture
def figure_sentence():
    from structsum.conllu import parse_conllu

    return parse_conllu(FIGURE_CONLLU)[0]


def flat_parse(tokens):
    """A star-shaped parse (everything hangs off the first token)."""
    from structsum.conllu import ParsedSentence

    n = len(tokens)
    return ParsedSentence(
        tokens=list(tokens),
        pos=["X"] * n,
        head=[0] + [1] * (n - 1),
        deprel=["root"] + ["dep"] * (n - 1),
    )


def tiny_vocab(pairs, v_in=50, v_out=50, parses=None):
    from structsum.corpus import build_vocabularies
    from structsum.features import extract_structural_labels

    labels = [extract_structural_labels(p) for p in parses] if parses else None
    return build_vocabularies(pairs, v_in, v_out, labels=labels)


def seeded(seed=0):
    return np.random.default_rng(seed)
