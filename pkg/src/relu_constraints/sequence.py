"""First-order sequence labeling: Viterbi, constrained beam search, training.

Scores decompose as ``start[y0] + sum_t emit[t, y_t] + sum_t trans[y_{t-1}, y_t]``.
Emissions come either from sparse token features with a learned weight
matrix, or from an externally produced score matrix (for example the
emission layer of a neural tagger).
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass

import numpy as np

from .constraint_extraction import TOLERANCE
from .constraint_features import (FeatureTemplate, LabelVocab, TaggedSequence, is_punctuation,
                                  sequence_vector, window_vector)

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


class DecodeError(ValueError):
    pass


@dataclass(frozen=True)
class ScoreMatrix:
    emissions: np.ndarray  # (T, L)
    sequence: TaggedSequence | None = None  # tokens/POS for window constraints, if known

    def __post_init__(self):
        e = np.asarray(self.emissions, dtype=float)
        if e.ndim != 2 or e.shape[0] < 1:
            raise DecodeError(f"emissions must be a nonempty T x L matrix, got shape {e.shape}")
        if self.sequence is not None and len(self.sequence) != e.shape[0]:
            raise DecodeError(f"score matrix has {e.shape[0]} rows, sequence has {len(self.sequence)} tokens")
        object.__setattr__(self, "emissions", e)

    def __len__(self):
        return self.emissions.shape[0]


def token_features(tokens, t: int) -> list[str]:
    tok = tokens[t]
    low = tok.lower()
    feats = ["bias", "w=" + tok, "lw=" + low, "p3=" + low[:3], "s3=" + low[-3:]]
    if any(ch.isdigit() for ch in tok):
        feats.append("has_digit")
    if is_punctuation(tok):
        feats.append("punct")
    return feats


class SequenceModel:
    def __init__(self, labels, transitions=None, start_scores=None, feature_index=None,
                 feature_weights=None):
        self.labels = tuple(labels)
        L = len(self.labels)
        self.transitions = np.zeros((L, L)) if transitions is None else np.asarray(transitions, dtype=float)
        self.start_scores = np.zeros(L) if start_scores is None else np.asarray(start_scores, dtype=float)
        self.feature_index = dict(feature_index or {})
        if feature_weights is None:
            feature_weights = np.zeros((len(self.feature_index), L))
        self.feature_weights = np.asarray(feature_weights, dtype=float)
        if self.transitions.shape != (L, L) or self.start_scores.shape != (L,):
            raise DecodeError("transition/start shapes do not match the label count")
        if self.feature_weights.shape != (len(self.feature_index), L):
            raise DecodeError("feature weight shape does not match the feature index")
        for arr in (self.transitions, self.start_scores, self.feature_weights):
            if not np.all(np.isfinite(arr)):
                raise DecodeError("model scores must be finite")

    @property
    def label_count(self) -> int:
        return len(self.labels)

    def feature_ids(self, tokens):
        return [[self.feature_index[f] for f in token_features(tokens, t) if f in self.feature_index]
                for t in range(len(tokens))]

    def emission_scores(self, sentence) -> np.ndarray:
        if isinstance(sentence, ScoreMatrix):
            if sentence.emissions.shape[1] != self.label_count:
                raise DecodeError(
                    f"score matrix has {sentence.emissions.shape[1]} labels, model has {self.label_count}")
            return sentence.emissions
        if isinstance(sentence, np.ndarray):
            return self.emission_scores(ScoreMatrix(sentence))
        tokens = sentence.tokens if isinstance(sentence, TaggedSequence) else list(sentence)
        E = np.zeros((len(tokens), self.label_count))
        for t, ids in enumerate(self.feature_ids(tokens)):
            if ids:
                E[t] = self.feature_weights[ids].sum(axis=0)
        return E

    def path_score(self, sentence, labels) -> float:
        return _path_score(self.emission_scores(sentence), self.transitions, self.start_scores, labels)

    def label_names(self, ids) -> list[str]:
        return [self.labels[i] for i in ids]

    def to_dict(self) -> dict:
        names = sorted(self.feature_index, key=self.feature_index.get)
        return {
            "format_version": FORMAT_VERSION,
            "labels": list(self.labels),
            "start_scores": self.start_scores.tolist(),
            "transitions": self.transitions.tolist(),
            "features": names,
            "weights": self.feature_weights.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SequenceModel":
        if d.get("format_version") != FORMAT_VERSION:
            raise DecodeError(f"unsupported model format_version {d.get('format_version')!r}")
        index = {f: i for i, f in enumerate(d["features"])}
        W = np.asarray(d["weights"], dtype=float).reshape(len(index), len(d["labels"]))
        return cls(d["labels"], d["transitions"], d["start_scores"], index, W)


def _path_score(E, T, S, labels) -> float:
    labels = list(labels)
    s = S[labels[0]] + E[0, labels[0]]
    for t in range(1, len(labels)):
        s += T[labels[t - 1], labels[t]] + E[t, labels[t]]
    return float(s)


def _viterbi(E, T, S) -> list[int]:
    n, L = E.shape
    delta = S + E[0]
    back = np.zeros((n, L), dtype=np.int64)
    for t in range(1, n):
        cand = delta[:, None] + T  # [from, to]
        back[t] = np.argmax(cand, axis=0)  # first maximum -> lower label index
        delta = cand[back[t], np.arange(L)] + E[t]
    y = [int(np.argmax(delta))]
    for t in range(n - 1, 0, -1):
        y.append(int(back[t, y[-1]]))
    return y[::-1]


def viterbi(model: SequenceModel, sentence) -> list[int]:
    """Exact highest-scoring label sequence (label indices)."""
    E = model.emission_scores(sentence)
    return _viterbi(E, model.transitions, model.start_scores)


def loss_augmented_viterbi(model: SequenceModel, sentence, gold) -> list[int]:
    """argmax of model score plus Hamming distance to ``gold``."""
    E = model.emission_scores(sentence).copy()
    gold = np.asarray(gold)
    if len(gold) != E.shape[0]:
        raise DecodeError("gold length does not match the sentence")
    E += 1.0
    E[np.arange(len(gold)), gold] -= 1.0
    return _viterbi(E, model.transitions, model.start_scores)


# ---------------------------------------------------------------------------
# constrained beam search


class _Checker:
    """Feasibility of label prefixes under a list of (system, template) pairs."""

    def __init__(self, systems, vocab: LabelVocab, sentence):
        self.vocab = vocab
        self.local, self.glob = [], []
        pos = punct = None
        if isinstance(sentence, ScoreMatrix) and sentence.sequence is not None:
            sentence = sentence.sequence
        tokens = getattr(sentence, "tokens", None)
        for system, template in systems:
            if not isinstance(template, FeatureTemplate):
                raise DecodeError("each constraint system needs its feature template")
            if system.input_dim != template.dim(vocab):
                raise DecodeError(
                    f"system over {system.input_dim} features does not match template "
                    f"{template.name} of dim {template.dim(vocab)}")
            if template.kind == "pos_window":
                if not isinstance(sentence, TaggedSequence) or not sentence.pos_tags:
                    raise DecodeError("a POS-window system needs POS tags on the sentence")
                pos = [vocab.pos_index(p) for p in sentence.pos_tags]
            if template.kind == "punctuation_window":
                if tokens is None:
                    raise DecodeError("a punctuation-window system needs sentence tokens")
                punct = [int(is_punctuation(tok)) for tok in tokens]
            (self.local if template.is_local else self.glob).append((system, template))
        self.pos, self.punct = pos, punct

    def _window(self, template, prefix, end):
        n = template.n
        lo = end - n + 1
        return window_vector(template, self.vocab, prefix[lo:end + 1],
                             None if self.pos is None else self.pos[lo:end + 1],
                             None if self.punct is None else self.punct[lo:end + 1])

    def local_ok(self, prefixes, end: int) -> np.ndarray:
        """Whether the window ending at ``end`` passes every local system, per prefix."""
        ok = np.ones(len(prefixes), dtype=bool)
        for system, template in self.local:
            if end < template.n - 1:
                continue
            X = np.stack([self._window(template, p, end) for p in prefixes])
            ok &= system.feasible_many(X, TOLERANCE)
        return ok

    def complete_ok(self, seq) -> bool:
        for system, template in self.local:
            for end in range(template.n - 1, len(seq)):
                if not system.feasible_many(self._window(template, seq, end))[0]:
                    return False
        for system, template in self.glob:
            if not system.feasible_many(sequence_vector(template, self.vocab, seq))[0]:
                return False
        return True


def _rank(states, bad=None):
    if bad is None:
        order = sorted(range(len(states)), key=lambda i: (-states[i][0], states[i][1]))
    else:
        order = sorted(range(len(states)), key=lambda i: (bool(bad[i]), -states[i][0], states[i][1]))
    return [states[i] for i in order]


def _plain_beam(E, T, S, beam_width):
    L = E.shape[1]
    beam = _rank([(float(S[l] + E[0, l]), (l,)) for l in range(L)])[:beam_width]
    for t in range(1, E.shape[0]):
        cand = [(s + float(T[p[-1], l] + E[t, l]), p + (l,)) for s, p in beam for l in range(L)]
        beam = _rank(cand)[:beam_width]
    return beam


def beam_decode(model: SequenceModel, sentence, systems=(), beam_width: int = 50,
                fallback: bool = True, mode: str = "prune", vocab: LabelVocab | None = None,
                debug: bool = False):
    """Left-to-right beam search filtered by learned constraint systems.

    ``systems`` is a sequence of ``(ConstraintSystem, FeatureTemplate)``.
    Window templates are checked as soon as a window is complete and their
    violators are pruned before the beam is cut to ``beam_width``; global
    templates are only checked on complete sequences. If every candidate
    would be pruned at some step, the unpruned candidates are kept for that
    step. If no complete sequence satisfies all systems, the result of the
    unconstrained beam is returned when ``fallback`` is set, and ``None``
    otherwise. ``mode="rerank"`` orders violators after satisfying states
    instead of removing them.

    Returns label indices.
    """
    if beam_width < 1:
        raise DecodeError("beam_width must be at least 1")
    if mode not in ("prune", "rerank"):
        raise DecodeError(f"unknown beam mode {mode!r}")
    E = model.emission_scores(sentence)
    T, S = model.transitions, model.start_scores
    L = model.label_count
    if not systems:
        return list(_plain_beam(E, T, S, beam_width)[0][1])

    vocab = vocab or LabelVocab(model.labels)
    if vocab.labels != model.labels:
        raise DecodeError("constraint vocabulary labels must match the model's label order")
    checker = _Checker(systems, vocab, sentence)

    def step(cand, end):
        nonlocal restored
        ok = checker.local_ok([p for _, p in cand], end)
        if mode == "rerank":
            return _rank(cand, ~ok)[:beam_width]
        kept = [c for c, good in zip(cand, ok) if good]
        if not kept:
            restored = True
            kept = cand
        return _rank(kept)[:beam_width]

    restored = False
    beam = step([(float(S[l] + E[0, l]), (l,)) for l in range(L)], 0)
    for t in range(1, E.shape[0]):
        cand = [(s + float(T[p[-1], l] + E[t, l]), p + (l,)) for s, p in beam for l in range(L)]
        beam = step(cand, t)
    if restored:
        log.debug("local constraints pruned every candidate at some step; kept unpruned candidates")
    if debug:
        for s, p in beam:
            assert abs(s - _path_score(E, T, S, p)) <= 1e-9 * max(1.0, abs(s)), "beam score drifted"

    ok = np.array([checker.complete_ok(p) for _, p in beam])
    if mode == "rerank":
        return list(_rank(beam, ~ok)[0][1])
    good = [st for st, g in zip(beam, ok) if g]
    if good:
        return list(_rank(good)[0][1])
    if fallback:
        log.debug("no beam state satisfies the constraints; falling back to the unconstrained beam")
        return list(_plain_beam(E, T, S, beam_width)[0][1])
    return None


def token_accuracy(predicted, gold) -> float:
    if len(predicted) != len(gold):
        raise DecodeError(f"length mismatch: {len(predicted)} predicted vs {len(gold)} gold")
    if len(gold) == 0:
        raise DecodeError("empty sequences")
    return float(np.mean([p == g for p, g in zip(predicted, gold)]))


def corpus_token_accuracy(predictions, golds) -> float:
    hits = total = 0
    for p, g in zip(predictions, golds):
        if len(p) != len(g):
            raise DecodeError(f"length mismatch: {len(p)} predicted vs {len(g)} gold")
        hits += sum(a == b for a, b in zip(p, g))
        total += len(g)
    return hits / total


# ---------------------------------------------------------------------------
# training


@dataclass
class MarkovTrainConfig:
    trade_off: float = 0.0  # L2 coefficient; 0 means unregularized
    epochs: int = 10
    seed: int = 0
    mode: str = "structured_hinge"  # or "averaged_perceptron"
    learning_rate: float = 0.1

    def __post_init__(self):
        if self.mode not in ("structured_hinge", "averaged_perceptron"):
            raise ValueError(f"unknown training mode {self.mode!r}")
        if self.trade_off < 0 or self.epochs < 1 or self.learning_rate <= 0:
            raise ValueError("invalid training configuration")


def _phi_update(model, fids, labels, scale, out_W, out_T, out_S):
    for t, y in enumerate(labels):
        if fids[t]:
            out_W[fids[t], y] += scale
        if t == 0:
            out_S[y] += scale
        else:
            out_T[labels[t - 1], y] += scale


def train_markov(corpus, config: MarkovTrainConfig | None = None, labels=None) -> SequenceModel:
    """Fit emission, transition and start scores on a labeled corpus.

    ``structured_hinge`` runs stochastic subgradient descent on the
    margin-rescaled hinge loss with Hamming cost (L2 weight ``trade_off``);
    ``averaged_perceptron`` returns the average of the perceptron iterates.
    """
    config = config or MarkovTrainConfig()
    if not corpus:
        raise ValueError("empty corpus")
    labels = tuple(labels) if labels is not None else tuple(sorted({l for s in corpus for l in s.labels}))
    lab_index = {l: i for i, l in enumerate(labels)}
    index: dict[str, int] = {}
    for s in corpus:
        for t in range(len(s)):
            for f in token_features(s.tokens, t):
                index.setdefault(f, len(index))
    L = len(labels)
    model = SequenceModel(labels, feature_index=index)
    W, T, S = model.feature_weights, model.transitions, model.start_scores
    data = [(model.feature_ids(s.tokens), [lab_index[l] for l in s.labels], s) for s in corpus]
    rng = np.random.default_rng(config.seed)

    averaged = config.mode == "averaged_perceptron"
    if averaged:
        sW, sT, sS = np.zeros_like(W), np.zeros_like(T), np.zeros_like(S)
    count = 0
    for _ in range(config.epochs):
        for i in rng.permutation(len(data)):
            fids, gold, seq = data[i]
            if averaged:
                pred = viterbi(model, seq.tokens)
                if pred != gold:
                    _phi_update(model, fids, gold, 1.0, W, T, S)
                    _phi_update(model, fids, pred, -1.0, W, T, S)
                sW += W
                sT += T
                sS += S
            else:
                lam = config.trade_off
                eta = config.learning_rate / (1.0 + config.learning_rate * lam * count)
                pred = loss_augmented_viterbi(model, seq.tokens, gold)
                if lam > 0:
                    shrink = 1.0 - eta * lam
                    W *= shrink
                    T *= shrink
                    S *= shrink
                if pred != gold:
                    _phi_update(model, fids, gold, eta, W, T, S)
                    _phi_update(model, fids, pred, -eta, W, T, S)
            count += 1
    if averaged:
        return SequenceModel(labels, sT / count, sS / count, index, sW / count)
    return SequenceModel(labels, T, S, index, W)


# ---------------------------------------------------------------------------
# score-matrix files


@dataclass
class ScoreFile:
    labels: tuple
    matrices: list
    transitions: np.ndarray | None = None

    def model(self) -> SequenceModel:
        return SequenceModel(self.labels, self.transitions)


def _floats(line, lineno, expected):
    parts = line.split("\t")
    if len(parts) != expected:
        raise DecodeError(f"line {lineno}: expected {expected} scores, found {len(parts)}")
    try:
        return [float(x) for x in parts]
    except ValueError:
        raise DecodeError(f"line {lineno}: malformed score row") from None


def parse_score_file(text: str) -> ScoreFile:
    lines = text.split("\n")
    if not lines or not lines[0].startswith("labels:"):
        raise DecodeError("line 1: expected a 'labels:' header")
    labels = tuple(x.strip() for x in lines[0][len("labels:"):].split("\t") if x.strip())
    L = len(labels)
    if L < 1:
        raise DecodeError("line 1: no labels in header")
    matrices, rows, trans = [], [], None
    in_trans = False
    for lineno, line in enumerate(lines[1:], 2):
        if line.strip() == "transitions:":
            if rows:
                matrices.append(ScoreMatrix(np.array(rows)))
                rows = []
            in_trans, trans = True, []
            continue
        if not line.strip():
            if rows and not in_trans:
                matrices.append(ScoreMatrix(np.array(rows)))
                rows = []
            continue
        row = _floats(line, lineno, L)
        (trans if in_trans else rows).append(row)
    if rows:
        matrices.append(ScoreMatrix(np.array(rows)))
    if trans is not None:
        if len(trans) != L:
            raise DecodeError(f"transition block has {len(trans)} rows, expected {L}")
        trans = np.array(trans)
    return ScoreFile(labels, matrices, trans)


def read_score_file(path) -> ScoreFile:
    with open(path) as f:
        return parse_score_file(f.read())


def load_scores(path) -> list[ScoreMatrix]:
    return read_score_file(path).matrices


def format_score_file(sf: ScoreFile) -> str:
    out = ["labels: " + "\t".join(sf.labels)]
    blocks = ["\n".join("\t".join(repr(float(x)) for x in row) for row in m.emissions) for m in sf.matrices]
    out.append("\n\n".join(blocks))
    text = "\n".join(out) + "\n"
    if sf.transitions is not None:
        text += "\ntransitions:\n" + "\n".join("\t".join(repr(float(x)) for x in row)
                                                for row in sf.transitions) + "\n"
    return text


def write_score_file(sf: ScoreFile, path) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w") as f:
        f.write(format_score_file(sf))
    os.replace(tmp, path)


def dumps_model(model: SequenceModel) -> str:
    return json.dumps(model.to_dict(), separators=(",", ":")) + "\n"


def loads_model(text: str) -> SequenceModel:
    return SequenceModel.from_dict(json.loads(text))
