"""Constraint features psi(x, y) and training-set construction.

Templates map a labeled sequence (or an entity-relation record) to one or
more fixed-length vectors. Positives come straight from annotated data;
each template has its own recipe for negatives, and no negative may
coincide with a positive.
"""
from __future__ import annotations

import itertools
import os
from dataclasses import dataclass, field

import numpy as np

from .rectifier_net import LabeledFeatureExample

DEFAULT_NEGATIVE_CAP = 50_000
MAX_PERTURB_ATTEMPTS = 10

GLOBAL_KINDS = ("label_existence", "label_counts")
LOCAL_KINDS = ("ngram_labels", "pos_window", "punctuation_window")
KINDS = GLOBAL_KINDS + LOCAL_KINDS + ("pair_indicator", "assignment")

ENTITY_LABELS = ("NoEnt", "Person", "Location", "Organization")
RELATION_LABELS = ("NoRel", "Kill", "LiveIn", "WorkFor", "LocatedAt", "OrgBasedIn")
PAIR_ROLES = ("source_relation", "relation_target", "relation_relation")


class FeatureError(ValueError):
    pass


def is_punctuation(token: str) -> bool:
    return len(token) > 0 and not any(ch.isalnum() for ch in token)


@dataclass(frozen=True)
class TaggedSequence:
    tokens: tuple
    labels: tuple
    pos_tags: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "pos_tags", tuple(self.pos_tags))
        if len(self.tokens) < 1:
            raise FeatureError("a sequence needs at least one token")
        if len(self.labels) != len(self.tokens):
            raise FeatureError(f"{len(self.tokens)} tokens but {len(self.labels)} labels")
        if self.pos_tags and len(self.pos_tags) != len(self.tokens):
            raise FeatureError(f"{len(self.tokens)} tokens but {len(self.pos_tags)} POS tags")

    def __len__(self):
        return len(self.tokens)

    def with_labels(self, labels) -> "TaggedSequence":
        return TaggedSequence(self.tokens, labels, self.pos_tags)


class LabelVocab:
    def __init__(self, labels, pos_values=()):
        self.labels = tuple(labels)
        self.pos_values = tuple(pos_values)
        if len(set(self.labels)) != len(self.labels) or len(set(self.pos_values)) != len(self.pos_values):
            raise FeatureError("vocabulary entries must be unique")
        self._label_index = {l: i for i, l in enumerate(self.labels)}
        self._pos_index = {p: i for i, p in enumerate(self.pos_values)}

    @classmethod
    def from_corpus(cls, corpus) -> "LabelVocab":
        labels = sorted({l for s in corpus for l in s.labels})
        pos = sorted({p for s in corpus for p in s.pos_tags})
        return cls(labels, pos)

    @property
    def n_labels(self) -> int:
        return len(self.labels)

    @property
    def n_pos(self) -> int:
        return len(self.pos_values)

    def index(self, label: str) -> int:
        try:
            return self._label_index[label]
        except KeyError:
            raise FeatureError(f"unknown label {label!r}") from None

    def pos_index(self, tag: str) -> int:
        try:
            return self._pos_index[tag]
        except KeyError:
            raise FeatureError(f"unknown POS tag {tag!r}") from None

    def as_dict(self) -> dict:
        return {"labels": list(self.labels), "pos_values": list(self.pos_values)}

    def __eq__(self, other):
        return isinstance(other, LabelVocab) and (self.labels, self.pos_values) == (other.labels, other.pos_values)

    def __repr__(self):
        return f"LabelVocab({len(self.labels)} labels, {len(self.pos_values)} POS values)"


@dataclass(frozen=True)
class FeatureTemplate:
    """A constraint-feature extractor.

    ``n`` is the window (or n-gram) length; ``label_existence`` with ``n > 1``
    is the n-gram label-existence feature used for chunking. ``negative_scheme``
    chooses between the enumeration recipe (``"enumerate"``) and random label
    perturbation (``"random_label"``) for the window templates.
    """

    kind: str
    n: int = 1
    role: str | None = None
    negative_scheme: str = "enumerate"
    cap: int = DEFAULT_NEGATIVE_CAP

    def __post_init__(self):
        if self.kind not in KINDS:
            raise FeatureError(f"unknown template kind {self.kind!r}")
        if self.n < 1:
            raise FeatureError("window length must be at least 1")
        if self.kind == "pair_indicator" and self.role not in PAIR_ROLES:
            raise FeatureError(f"pair_indicator needs a role in {PAIR_ROLES}, got {self.role!r}")
        if self.negative_scheme not in ("enumerate", "random_label"):
            raise FeatureError(f"unknown negative scheme {self.negative_scheme!r}")

    @property
    def scope(self) -> str:
        return "global" if self.kind in GLOBAL_KINDS else "local"

    @property
    def is_local(self) -> bool:
        return self.kind in LOCAL_KINDS

    @property
    def name(self) -> str:
        if self.kind == "pair_indicator":
            return f"pair_indicator({self.role})"
        if self.kind in ("label_counts", "assignment"):
            return self.kind
        return f"{self.kind}({self.n})"

    def dim(self, vocab: LabelVocab) -> int:
        L, n = vocab.n_labels, self.n
        if self.kind == "label_existence":
            return L ** n
        if self.kind == "label_counts":
            return L
        if self.kind == "ngram_labels":
            return L ** n
        if self.kind == "pos_window":
            return n * (vocab.n_pos + L)
        if self.kind == "punctuation_window":
            return n * (1 + L)
        if self.kind == "pair_indicator":
            return 12 if self.role == "relation_relation" else 10
        raise FeatureError(f"{self.kind} has no vocabulary-derived dimension")

    def as_dict(self) -> dict:
        d = {"kind": self.kind, "n": self.n}
        if self.role:
            d["role"] = self.role
        if self.negative_scheme != "enumerate":
            d["negative_scheme"] = self.negative_scheme
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureTemplate":
        return cls(d["kind"], int(d.get("n", 1)), d.get("role"), d.get("negative_scheme", "enumerate"))


@dataclass
class GeneratedDataset:
    positives: list
    negatives: list
    template: FeatureTemplate
    dim: int

    def __post_init__(self):
        pos_keys = {ex.key() for ex in self.positives}
        for ex in self.negatives:
            if ex.key() in pos_keys:
                raise FeatureError("a negative example coincides with a positive one")
        for ex in itertools.chain(self.positives, self.negatives):
            if len(ex.psi) != self.dim:
                raise FeatureError(f"vector of length {len(ex.psi)} in a dataset of dim {self.dim}")

    @property
    def examples(self) -> list:
        return list(self.positives) + list(self.negatives)


# ---------------------------------------------------------------------------
# extraction


def _ngram_index(ids, L):
    idx = 0
    for v in ids:
        idx = idx * L + int(v)
    return idx


def _ngram_ids(index, n, L):
    out = []
    for _ in range(n):
        out.append(index % L)
        index //= L
    return tuple(reversed(out))


def encode_sequence(seq: TaggedSequence, vocab: LabelVocab, need_pos: bool = False):
    """Integer-encoded ``(label_ids, pos_ids, punct_flags)`` for ``seq``."""
    labels = np.array([vocab.index(l) for l in seq.labels], dtype=np.int64)
    if need_pos:
        if not seq.pos_tags:
            raise FeatureError("template needs POS tags but the sequence has none")
        pos = np.array([vocab.pos_index(p) for p in seq.pos_tags], dtype=np.int64)
    else:
        pos = None
    punct = np.array([is_punctuation(t) for t in seq.tokens], dtype=np.int64)
    return labels, pos, punct


def window_vector(template: FeatureTemplate, vocab: LabelVocab, labels, pos=None, punct=None):
    """Feature vector of a single window of ``template.n`` integer labels."""
    L, n = vocab.n_labels, template.n
    kind = template.kind
    if kind == "ngram_labels":
        v = np.zeros(L ** n)
        v[_ngram_index(labels, L)] = 1.0
        return v
    if kind == "pos_window":
        P = vocab.n_pos
        v = np.zeros(n * (P + L))
        for j in range(n):
            v[j * P + pos[j]] = 1.0
            v[n * P + j * L + labels[j]] = 1.0
        return v
    if kind == "punctuation_window":
        v = np.zeros(n * (1 + L))
        for j in range(n):
            v[j] = float(punct[j])
            v[n + j * L + labels[j]] = 1.0
        return v
    raise FeatureError(f"{kind} is not a window template")


def sequence_vector(template: FeatureTemplate, vocab: LabelVocab, labels) -> np.ndarray:
    """Feature vector of a global template over a full integer label sequence."""
    L, n = vocab.n_labels, template.n
    if template.kind == "label_counts":
        return np.bincount(np.asarray(labels, dtype=np.int64), minlength=L).astype(float)
    if template.kind == "label_existence":
        v = np.zeros(L ** n)
        for t in range(len(labels) - n + 1):
            v[_ngram_index(labels[t:t + n], L)] = 1.0
        return v
    raise FeatureError(f"{template.kind} is not a global template")


def extract_ids(template: FeatureTemplate, vocab: LabelVocab, labels, pos=None, punct=None) -> list:
    if not template.is_local:
        return [sequence_vector(template, vocab, labels)]
    n = template.n
    return [window_vector(template, vocab, labels[t:t + n],
                          None if pos is None else pos[t:t + n],
                          None if punct is None else punct[t:t + n])
            for t in range(len(labels) - n + 1)]


def extract(template: FeatureTemplate, seq: TaggedSequence, vocab: LabelVocab) -> list:
    """Vectors for ``seq``: one for global templates, one per window for local ones."""
    if template.kind in ("pair_indicator", "assignment"):
        raise FeatureError(f"{template.kind} does not apply to tagged sequences")
    labels, pos, punct = encode_sequence(seq, vocab, need_pos=template.kind == "pos_window")
    return extract_ids(template, vocab, labels, pos, punct)


def _dedup(vectors, label):
    seen, out = set(), []
    for v in vectors:
        key = tuple(v.tolist())
        if key not in seen:
            seen.add(key)
            out.append(LabeledFeatureExample(v, label))
    return out


def build_positive_set(template: FeatureTemplate, corpus, vocab: LabelVocab) -> list:
    if not corpus:
        raise FeatureError("empty corpus")
    vecs = []
    for i, seq in enumerate(corpus):
        try:
            vecs.extend(extract(template, seq, vocab))
        except FeatureError as e:
            raise FeatureError(f"sequence {i}: {e}") from e
    return _dedup(vecs, 1)


# ---------------------------------------------------------------------------
# negatives


def _window_tuples(template, corpus, vocab):
    """Seen (context, labels) window tuples, where context is the POS or punctuation part."""
    n = template.n
    out = []
    for seq in corpus:
        labels, pos, punct = encode_sequence(seq, vocab, need_pos=template.kind == "pos_window")
        ctx = pos if template.kind == "pos_window" else punct
        for t in range(len(labels) - n + 1):
            out.append((tuple(int(x) for x in ctx[t:t + n]), tuple(int(x) for x in labels[t:t + n])))
    return out


def _ngrams(corpus, vocab, n):
    seen = set()
    for seq in corpus:
        ids = [vocab.index(l) for l in seq.labels]
        for t in range(len(ids) - n + 1):
            seen.add(tuple(ids[t:t + n]))
    return seen


def _candidates(template, corpus, vocab, positives, rng):
    """Yield candidate negative vectors for ``template`` in a deterministic order."""
    kind, n, L = template.kind, template.n, vocab.n_labels

    if kind == "label_existence":
        # every single-bit flip of every positive
        for ex in positives:
            for j in range(len(ex.psi)):
                v = ex.psi.copy()
                v[j] = 1.0 - v[j]
                yield v
        return

    if kind == "label_counts":
        pos_keys = {ex.key() for ex in positives}
        for seq in corpus:
            ids = np.array([vocab.index(l) for l in seq.labels])
            for _ in range(MAX_PERTURB_ATTEMPTS):
                if L < 2:
                    break
                pos = int(rng.integers(len(ids)))
                new = int(rng.integers(L - 1))
                new += new >= ids[pos]
                pert = ids.copy()
                pert[pos] = new
                v = sequence_vector(template, vocab, pert)
                if tuple(v.tolist()) not in pos_keys:
                    yield v
                    break
        return

    if kind == "ngram_labels":
        shorter = _ngrams(corpus, vocab, n - 1) if n >= 3 else None
        for gram in itertools.product(range(L), repeat=n):
            # longer n-grams must stay almost feasible: some (n-1)-gram inside was seen
            if shorter is not None and gram[:-1] not in shorter and gram[1:] not in shorter:
                continue
            v = np.zeros(L ** n)
            v[_ngram_index(gram, L)] = 1.0
            yield v
        return

    if kind in ("pos_window", "punctuation_window"):
        seen = _window_tuples(template, corpus, vocab)
        if template.negative_scheme == "enumerate":
            contexts = sorted({c for c, _ in seen})
            label_tuples = sorted({l for _, l in seen})
            for ctx in contexts:
                for labs in label_tuples:
                    yield _window_from(template, vocab, ctx, labs)
        else:
            seen_set = set(seen)
            for ctx, labs in seen:
                for _ in range(MAX_PERTURB_ATTEMPTS):
                    if L < 2:
                        break
                    j = int(rng.integers(n))
                    new = int(rng.integers(L - 1))
                    new += new >= labs[j]
                    pert = labs[:j] + (new,) + labs[j + 1:]
                    if (ctx, pert) not in seen_set:
                        yield _window_from(template, vocab, ctx, pert)
                        break
        return

    raise FeatureError(f"no negative scheme for template {template.name}")


def _window_from(template, vocab, ctx, labs):
    if template.kind == "pos_window":
        return window_vector(template, vocab, labs, pos=ctx)
    return window_vector(template, vocab, labs, punct=ctx)


def generate_negatives(template: FeatureTemplate, corpus, vocab: LabelVocab, positives, seed: int = 0) -> list:
    """Negatives for ``template`` following its recipe, minus anything positive.

    Enumeration recipes are exhaustive; perturbation recipes draw from a
    generator seeded with ``seed``. When more than ``template.cap`` negatives
    result, a seeded uniform subsample (in original order) is kept.
    """
    rng = np.random.default_rng(seed)
    pos_keys = {ex.key() for ex in positives}
    seen, out = set(), []
    for v in _candidates(template, corpus, vocab, positives, rng):
        key = tuple(v.tolist())
        if key in pos_keys or key in seen:
            continue
        seen.add(key)
        out.append(v)
    if not out:
        raise FeatureError(f"degenerate template on corpus: {template.name} produced no negatives")
    if len(out) > template.cap:
        keep = np.sort(rng.choice(len(out), size=template.cap, replace=False))
        out = [out[i] for i in keep]
    return [LabeledFeatureExample(v, -1) for v in out]


def make_dataset(template: FeatureTemplate, corpus, vocab: LabelVocab, seed: int = 0) -> GeneratedDataset:
    positives = build_positive_set(template, corpus, vocab)
    negatives = generate_negatives(template, corpus, vocab, positives, seed)
    return GeneratedDataset(positives, negatives, template, template.dim(vocab))


# ---------------------------------------------------------------------------
# entity-relation indicator pairs


@dataclass(frozen=True)
class RelationRecord:
    """Labels for one entity pair: forward relation from source to target and its reverse."""

    source: str
    relation: str
    target: str
    reverse: str

    def __post_init__(self):
        for lab, allowed in ((self.source, ENTITY_LABELS), (self.target, ENTITY_LABELS),
                             (self.relation, RELATION_LABELS), (self.reverse, RELATION_LABELS)):
            if lab not in allowed:
                raise FeatureError(f"unknown label {lab!r}")


def pair_vector(role: str, first: str, second: str) -> np.ndarray:
    if role == "source_relation":
        a, b = ENTITY_LABELS, RELATION_LABELS
    elif role == "relation_target":
        a, b = RELATION_LABELS, ENTITY_LABELS
    elif role == "relation_relation":
        a, b = RELATION_LABELS, RELATION_LABELS
    else:
        raise FeatureError(f"unknown pair role {role!r}")
    if first not in a:
        raise FeatureError(f"unknown label {first!r}")
    if second not in b:
        raise FeatureError(f"unknown label {second!r}")
    v = np.zeros(len(a) + len(b))
    v[a.index(first)] = 1.0
    v[len(a) + b.index(second)] = 1.0
    return v


def pair_labels(role: str):
    if role == "source_relation":
        return ENTITY_LABELS, RELATION_LABELS
    if role == "relation_target":
        return RELATION_LABELS, ENTITY_LABELS
    if role == "relation_relation":
        return RELATION_LABELS, RELATION_LABELS
    raise FeatureError(f"unknown pair role {role!r}")


def record_pairs(role: str, rec: RelationRecord):
    """The two indicator pairs one record contributes, one per direction."""
    if role == "source_relation":
        return [(rec.source, rec.relation), (rec.target, rec.reverse)]
    if role == "relation_target":
        return [(rec.relation, rec.target), (rec.reverse, rec.source)]
    if role == "relation_relation":
        return [(rec.relation, rec.reverse), (rec.reverse, rec.relation)]
    raise FeatureError(f"unknown pair role {role!r}")


def pair_indicator_examples(records, role: str) -> GeneratedDataset:
    template = FeatureTemplate("pair_indicator", role=role)
    seen, order = set(), []
    for rec in records:
        for p in record_pairs(role, rec):
            if p not in seen:
                seen.add(p)
                order.append(p)
    positives = [LabeledFeatureExample(pair_vector(role, *p), 1) for p in order]
    first, second = pair_labels(role)
    negatives = [LabeledFeatureExample(pair_vector(role, a, b), -1)
                 for a in first for b in second if (a, b) not in seen]
    return GeneratedDataset(positives, negatives, template, len(first) + len(second))


def read_relation_records(path) -> list:
    out = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 4:
                raise FeatureError(f"{path}:{lineno}: expected 4 labels, got {len(parts)}")
            try:
                out.append(RelationRecord(*parts))
            except FeatureError as e:
                raise FeatureError(f"{path}:{lineno}: {e}") from e
    return out


# ---------------------------------------------------------------------------
# IOB chunk labels and column files


def valid_iob_transition(prev: str | None, cur: str) -> bool:
    """False exactly when ``I-X`` follows ``O`` or a chunk of a different type."""
    if not cur.startswith("I-") or prev is None:
        return True
    if prev == "O":
        return False
    return prev[2:] == cur[2:]


def iob_violations(labels) -> list:
    return [t for t in range(1, len(labels)) if not valid_iob_transition(labels[t - 1], labels[t])]


def read_conll(path, check_iob: bool = False) -> list:
    """Read a column file: ``token [POS] label`` per line, blank line between sequences."""
    seqs, rows = [], []

    def flush(lineno):
        if not rows:
            return
        if {len(r) for r in rows} - {len(rows[0])}:
            raise FeatureError(f"{path}:{lineno}: inconsistent column count in sequence")
        toks = [r[0] for r in rows]
        labels = [r[-1] for r in rows]
        pos = [r[1] for r in rows] if len(rows[0]) >= 3 else []
        if check_iob and iob_violations(labels):
            raise FeatureError(f"{path}:{lineno}: invalid IOB transition")
        seqs.append(TaggedSequence(toks, labels, pos))
        rows.clear()

    with open(path) as f:
        lineno = 0
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line.strip():
                flush(lineno)
                continue
            if line.startswith("-DOCSTART-"):
                continue
            parts = line.split("\t") if "\t" in line else line.split()
            if len(parts) < 2:
                raise FeatureError(f"{path}:{lineno}: expected at least token and label")
            rows.append(parts)
        flush(lineno)
    return seqs


def format_conll(corpus) -> str:
    blocks = []
    for s in corpus:
        if s.pos_tags:
            lines = [f"{t}\t{p}\t{l}" for t, p, l in zip(s.tokens, s.pos_tags, s.labels)]
        else:
            lines = [f"{t}\t{l}" for t, l in zip(s.tokens, s.labels)]
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"


def write_conll(corpus, path) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w") as f:
        f.write(format_conll(corpus))
    os.replace(tmp, path)
