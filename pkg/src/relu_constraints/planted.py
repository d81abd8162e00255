"""A small citation-style corpus with one planted label regularity.

Each citation is a random ordering of fields (author, title, venue, date,
pages). Every label bigram occurs somewhere except ``FORBIDDEN``: an
author field is never immediately followed by a pages field. Several
tokens are shared between fields ("and", "of", bare numbers) so that a
weak tagger can be tempted into the forbidden transition.
"""
from __future__ import annotations

from importlib import resources

import numpy as np

from .constraint_features import TaggedSequence, read_conll

LABELS = ("AUTHOR", "TITLE", "VENUE", "DATE", "PAGES")
FORBIDDEN = ("AUTHOR", "PAGES")
BUNDLED_SEED = 2019
BUNDLED_COUNT = 50
BUNDLED_NAME = "planted_citations.conll"

_SURNAMES = ("Smith", "Chen", "Garcia", "Okafor", "Novak", "Kumar", "Lee", "Rossi")
_INITIALS = ("J.", "A.", "M.", "K.", "R.")
_TITLE_WORDS = ("learning", "constraints", "neural", "structured", "inference", "parsing",
                "models", "networks", "sequence", "labeling")
_VENUES = (("Proc.", "of", "ACL"), ("Journal", "of", "Machine", "Learning"), ("EMNLP",),
           ("Trans.", "of", "AI"), ("NeurIPS",))
_YEARS = ("1999", "2004", "2011", "2016", "2019")


def _pos(tok: str) -> str:
    if not any(ch.isalnum() for ch in tok):
        return "PUNC"
    if tok in ("and", "of", "pp."):
        return {"and": "CC", "of": "IN", "pp.": "NN"}[tok]
    if tok[0].isdigit():
        return "CD"
    if tok[0].isupper():
        return "NNP"
    return "NN"


def _field(label: str, rng: np.random.Generator) -> list:
    if label == "AUTHOR":
        toks = [str(rng.choice(_SURNAMES)), ",", str(rng.choice(_INITIALS))]
        if rng.random() < 0.4:
            toks += ["and", str(rng.choice(_SURNAMES))]
    elif label == "TITLE":
        k = int(rng.integers(2, 5))
        toks = [str(w) for w in rng.choice(_TITLE_WORDS, size=k)]
        if rng.random() < 0.3:
            toks.insert(1, "and" if rng.random() < 0.5 else "of")
    elif label == "VENUE":
        toks = list(_VENUES[int(rng.integers(len(_VENUES)))])
    elif label == "DATE":
        toks = [str(rng.choice(_YEARS))] if rng.random() < 0.5 else ["(", str(rng.choice(_YEARS)), ")"]
    else:
        a = int(rng.integers(1, 400))
        toks = ["pp.", f"{a}-{a + int(rng.integers(5, 20))}"] if rng.random() < 0.5 else [str(a)]
    return toks


def _order(rng: np.random.Generator) -> list:
    while True:
        k = int(rng.integers(3, len(LABELS) + 1))
        order = [LABELS[i] for i in rng.permutation(len(LABELS))[:k]]
        if not any((a, b) == FORBIDDEN for a, b in zip(order, order[1:])):
            return order


def planted_corpus(count: int = BUNDLED_COUNT, seed: int = BUNDLED_SEED) -> list:
    """``count`` tagged citations, none containing the ``FORBIDDEN`` bigram."""
    rng = np.random.default_rng(seed)
    corpus = []
    for _ in range(count):
        tokens, labels = [], []
        for label in _order(rng):
            toks = _field(label, rng)
            tokens += toks
            labels += [label] * len(toks)
        corpus.append(TaggedSequence(tokens, labels, [_pos(t) for t in tokens]))
    return corpus


def label_bigrams(corpus) -> set:
    return {(a, b) for s in corpus for a, b in zip(s.labels, s.labels[1:])}


def split(corpus, train_fraction: float = 0.8) -> tuple[list, list]:
    """Deterministic head/tail split."""
    cut = int(round(train_fraction * len(corpus)))
    return list(corpus[:cut]), list(corpus[cut:])


def load_bundled() -> list:
    with resources.as_file(resources.files("relu_constraints").joinpath("data", BUNDLED_NAME)) as p:
        return read_conll(p)
