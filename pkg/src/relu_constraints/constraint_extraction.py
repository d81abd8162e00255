"""Linear-inequality systems and their conversion from rectifier networks.

A network with K hidden ReLUs accepts ``psi`` exactly when, for every
nonempty subset S of the hidden units,

    1 - sum_{k in S} (w_k . psi + b_k) >= 0.

:func:`extract_system` enumerates those ``2**K - 1`` inequalities. The
threshold-network helpers give the same accept/reject semantics written as
a conjunction of sign units and are used as cross-checks.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .rectifier_net import ConstraintNet, DimensionError

FORMAT_VERSION = 1
TOLERANCE = 1e-9
MAX_HIDDEN_FOR_EXTRACTION = 20


@dataclass(frozen=True)
class LinearInequality:
    """``weights . psi + bias >= 0``; ``subset_mask`` is 0 for hand-written rows."""

    weights: np.ndarray
    bias: float
    subset_mask: int = 0

    def value(self, psi) -> float:
        return float(np.dot(self.weights, psi) + self.bias)

    def satisfied(self, psi, tol: float = TOLERANCE) -> bool:
        return self.value(psi) >= -tol


class ConstraintSystem:
    """An ordered conjunction of linear inequalities over a fixed feature space.

    Coefficients are held as one (m, d) matrix so feasibility checks over
    many vectors vectorize.
    """

    def __init__(self, input_dim: int, weights, biases, masks=None, origin: str = "manual",
                 hidden_count: int | None = None):
        W = np.array(weights, dtype=float).reshape(-1, input_dim) if np.size(weights) \
            else np.zeros((0, input_dim))
        b = np.array(biases, dtype=float).reshape(-1)
        if W.shape[0] != b.shape[0]:
            raise DimensionError(f"{W.shape[0]} weight rows but {b.shape[0]} biases")
        masks = np.zeros(len(b), dtype=np.int64) if masks is None else np.asarray(masks, dtype=np.int64)
        if masks.shape != b.shape:
            raise DimensionError("one subset mask per inequality is required")
        for arr in (W, b, masks):
            arr.setflags(write=False)
        self.input_dim = int(input_dim)
        self.W, self.b, self.masks = W, b, masks
        self.origin = origin
        self.hidden_count = hidden_count
        if hidden_count is not None and len(b) != 2**hidden_count - 1:
            raise ValueError(
                f"system from {hidden_count} hidden units must have {2**hidden_count - 1} "
                f"inequalities, found {len(b)}")

    @classmethod
    def from_inequalities(cls, input_dim: int, inequalities, origin: str = "manual"):
        ineqs = list(inequalities)
        for q in ineqs:
            if len(q.weights) != input_dim:
                raise DimensionError(f"inequality has {len(q.weights)} weights, expected {input_dim}")
        return cls(input_dim, [q.weights for q in ineqs], [q.bias for q in ineqs],
                   [q.subset_mask for q in ineqs], origin)

    def __len__(self):
        return len(self.b)

    def __getitem__(self, i) -> LinearInequality:
        return LinearInequality(self.W[i].copy(), float(self.b[i]), int(self.masks[i]))

    @property
    def inequalities(self) -> list[LinearInequality]:
        return [self[i] for i in range(len(self))]

    def values(self, psi) -> np.ndarray:
        """Left-hand sides ``W psi + b``; shape (m,) for a vector, (N, m) for a batch."""
        psi = np.asarray(psi, dtype=float)
        if psi.shape[-1] != self.input_dim:
            raise DimensionError(f"expected psi of dimension {self.input_dim}, got {psi.shape[-1]}")
        return psi @ self.W.T + self.b

    def feasible_many(self, psis, tol: float = TOLERANCE) -> np.ndarray:
        v = self.values(np.atleast_2d(psis))
        if v.shape[1] == 0:
            return np.ones(v.shape[0], dtype=bool)
        return v.min(axis=1) >= -tol

    def __repr__(self):
        return f"ConstraintSystem(input_dim={self.input_dim}, m={len(self)}, origin={self.origin!r})"


def extract_system(net: ConstraintNet, origin: str | None = None) -> ConstraintSystem:
    """One inequality per nonempty subset of hidden units, in ascending mask order."""
    K = net.hidden_count
    if K > MAX_HIDDEN_FOR_EXTRACTION:
        raise ValueError(f"subset enumeration too large: {K} hidden units (limit {MAX_HIDDEN_FOR_EXTRACTION})")
    masks = np.arange(1, 2**K, dtype=np.int64)
    member = ((masks[:, None] >> np.arange(K)) & 1).astype(float)  # (2^K-1, K)
    W = -(member @ net.weights)
    b = 1.0 - member @ net.biases
    return ConstraintSystem(net.input_dim, W, b, masks,
                            origin=origin or f"net:{net.fingerprint()}", hidden_count=K)


def is_feasible(system: ConstraintSystem, psi, tol: float = TOLERANCE) -> bool:
    v = system.values(psi)
    return bool(v.size == 0 or v.min() >= -tol)


def all_feasible(systems, psi, tol: float = TOLERANCE) -> bool:
    """Conjunction across several systems."""
    return all(is_feasible(s, psi, tol) for s in systems)


def violated_indices(system: ConstraintSystem, psi, tol: float = TOLERANCE):
    """``[(index, amount)]`` for violated rows, most violated first."""
    v = system.values(psi)
    bad = np.flatnonzero(v < -tol)
    order = sorted(bad, key=lambda i: (v[i], i))
    return [(int(i), float(-v[i])) for i in order]


def _sgn(x):
    return np.where(np.asarray(x) >= 0, 1, -1)


def conjunction_eval(constraint_values) -> int:
    """Logical AND of +/-1 values written as a single threshold unit."""
    c = np.asarray(list(constraint_values))
    if c.size == 0:
        raise ValueError("conjunction of an empty list")
    if not np.all((c == 1) | (c == -1)):
        raise ValueError(f"constraint values must be +1 or -1, got {c.tolist()}")
    return int(_sgn(1 - len(c) + c.sum()))


def threshold_net_eval(weights, biases, psi) -> int:
    W = np.atleast_2d(np.asarray(weights, dtype=float))
    b = np.asarray(biases, dtype=float).reshape(-1)
    psi = np.asarray(psi, dtype=float)
    if W.shape[0] != b.shape[0] or W.shape[1] != psi.shape[0]:
        raise DimensionError(
            f"inconsistent shapes: weights {W.shape}, biases {b.shape}, psi {psi.shape}")
    K = W.shape[0]
    return int(_sgn(1 - K + _sgn(W @ psi + b).sum()))


def _fmt(x):
    return format(float(x), ".17g")


def dumps_system(system: ConstraintSystem, **meta) -> str:
    """JSON text with one inequality per line for readability."""
    head = {"format_version": FORMAT_VERSION, "input_dim": system.input_dim, "origin": system.origin}
    if system.hidden_count is not None:
        head["hidden_count"] = system.hidden_count
    head.update(meta)
    lines = ["{"]
    for k, v in head.items():
        lines.append(f" {json.dumps(k)}: {json.dumps(v, sort_keys=True)},")
    lines.append(' "inequalities": [')
    rows = []
    for i in range(len(system)):
        w = ", ".join(_fmt(x) for x in system.W[i])
        rows.append(f'  {{"mask": {int(system.masks[i])}, "bias": {_fmt(system.b[i])}, "weights": [{w}]}}')
    lines.append(",\n".join(rows))
    lines.append(" ]")
    lines.append("}")
    return "\n".join(lines) + "\n"


def loads_system(text: str) -> tuple[ConstraintSystem, dict]:
    doc = json.loads(text)
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported system format_version {doc.get('format_version')!r}")
    d = int(doc["input_dim"])
    rows = doc["inequalities"]
    for r in rows:
        if len(r["weights"]) != d:
            raise DimensionError(f"inequality has {len(r['weights'])} weights, expected {d}")
    sys_ = ConstraintSystem(d, [r["weights"] for r in rows], [r["bias"] for r in rows],
                            [r["mask"] for r in rows], origin=doc.get("origin", "manual"),
                            hidden_count=doc.get("hidden_count"))
    meta = {k: v for k, v in doc.items()
            if k not in ("format_version", "input_dim", "origin", "hidden_count", "inequalities")}
    return sys_, meta
