"""Synthetic binary ILPs with hidden shared constraints.

Every instance in a family minimizes its own cost vector ``c . z`` over
``z in {0,1}^n`` subject to the same hidden system ``A z >= b``. Optimal
solutions of the training instances are the positive examples for
constraint learning; single-bit flips that would lower the objective are
the negatives.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numba
import numpy as np

from .constraint_extraction import TOLERANCE, ConstraintSystem, extract_system
from .constraint_features import FeatureTemplate, GeneratedDataset
from .rectifier_net import (ConstraintNet, DimensionError, LabeledFeatureExample, classification_accuracy,
                           select_and_train)

FORMAT_VERSION = 1
OBJECTIVE_TIE = 1e-12
# with the 0.5 sqrt(n) slack, ten rows at n=50 rarely bind; thirty do while staying cheap to solve
DEFAULT_CONSTRAINTS = 30


@dataclass(frozen=True)
class IlpInstance:
    costs: np.ndarray
    family_id: str = ""

    def __post_init__(self):
        c = np.asarray(self.costs, dtype=float)
        if c.ndim != 1 or c.size < 1:
            raise DimensionError("costs must be a nonempty vector")
        if not np.all(np.isfinite(c)):
            raise ValueError("costs must be finite")
        object.__setattr__(self, "costs", c)

    @property
    def n(self) -> int:
        return self.costs.size


@dataclass(frozen=True)
class SharedConstraints:
    """``matrix @ z >= bounds``."""

    matrix: np.ndarray
    bounds: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        b = np.asarray(self.bounds, dtype=float).reshape(-1)
        if A.shape[0] != b.shape[0]:
            raise DimensionError(f"{A.shape[0]} constraint rows but {b.shape[0]} bounds")
        object.__setattr__(self, "matrix", A)
        object.__setattr__(self, "bounds", b)

    @property
    def m(self) -> int:
        return self.matrix.shape[0]

    @property
    def n(self) -> int:
        return self.matrix.shape[1]

    def satisfied(self, z, tol: float = TOLERANCE) -> np.ndarray:
        return self.matrix @ np.asarray(z, dtype=float) - self.bounds >= -tol


@dataclass
class IlpSolution:
    assignment: np.ndarray | None
    objective: float
    status: str  # "optimal" or "infeasible"
    nodes: int = 0


def generate_family(n: int, m: int = DEFAULT_CONSTRAINTS, count: int = 100, seed: int = 0):
    """Random constraints made feasible through a hidden witness point.

    ``A`` is uniform on [-1, 1]; ``b = A z* - u`` with ``u`` uniform on
    ``[0, 0.5 sqrt(n)]`` so the random binary witness ``z*`` satisfies every
    row. Costs are uniform on [-1, 1].
    """
    if n < 2 or m < 1 or count < 1:
        raise ValueError(f"need n >= 2, m >= 1, count >= 1 (got n={n}, m={m}, count={count})")
    rng = np.random.default_rng(seed)
    A = rng.uniform(-1.0, 1.0, size=(m, n))
    witness = rng.integers(0, 2, size=n).astype(float)
    slack = rng.uniform(0.0, 0.5 * math.sqrt(n), size=m)
    shared = SharedConstraints(A, A @ witness - slack)
    fid = f"family-{seed}"
    instances = [IlpInstance(rng.uniform(-1.0, 1.0, size=n), fid) for _ in range(count)]
    return shared, instances


def _as_rows(constraints, n):
    """Normalize to ``G z + g0 >= -tol``."""
    if constraints is None:
        return np.zeros((0, n)), np.zeros(0)
    if isinstance(constraints, SharedConstraints):
        G, g0 = constraints.matrix, -constraints.bounds
    elif isinstance(constraints, ConstraintSystem):
        G, g0 = constraints.W, constraints.b
    else:
        raise TypeError(f"unsupported constraint type {type(constraints).__name__}")
    if G.shape[1] != n:
        raise DimensionError(f"constraints are over {G.shape[1]} variables, instance has {n}")
    return np.ascontiguousarray(G, dtype=float), np.ascontiguousarray(g0, dtype=float)


@numba.njit(cache=True)
def _root_multipliers(c, G, g0, iters):
    # subgradient ascent on  L(lam) = sum_i min(0, c_i - lam.G_i) - lam.g0,  lam >= 0
    m, n = G.shape
    lam = np.zeros(m)
    best_val = -np.inf
    best_lam = lam.copy()
    z = np.zeros(n)
    scale = 0.0
    for i in range(n):
        scale += abs(c[i])
    scale /= max(n, 1)
    for it in range(iters):
        val = 0.0
        for k in range(m):
            val -= lam[k] * g0[k]
        for i in range(n):
            r = c[i]
            for k in range(m):
                r -= lam[k] * G[k, i]
            z[i] = 1.0 if r < 0 else 0.0
            val += min(0.0, r)
        if val > best_val:
            best_val = val
            best_lam[:] = lam
        norm = 0.0
        sub = np.empty(m)
        for k in range(m):
            s = g0[k]
            for i in range(n):
                s += G[k, i] * z[i]
            sub[k] = -s
            norm += s * s
        if norm == 0.0:
            break
        step = scale / (1.0 + it) / np.sqrt(norm)
        for k in range(m):
            lam[k] = max(0.0, lam[k] + step * sub[k])
    return best_lam


@numba.njit(cache=True)
def _bnb(c, G, g0, lam, order, tol, tie):
    n = c.shape[0]
    m = G.shape[0]
    # reduced costs: for feasible z, c.z >= r.z - lam.g0 - tol*sum(lam)
    r = c.copy()
    shift = 0.0
    for k in range(m):
        shift -= lam[k] * g0[k] + tol * lam[k]
        for i in range(n):
            r[i] -= lam[k] * G[k, i]
    pref = np.zeros(n)
    for i in range(n):
        if r[i] < 0:
            pref[i] = 1.0
    pos = np.maximum(G, 0.0)
    lhs = g0.copy()
    rest = np.zeros(m)  # best achievable contribution of the free variables
    for k in range(m):
        for i in range(n):
            rest[k] += pos[k, i]
    bound = 0.0  # fixed-prefix cost + sum of min(0, c_i) over free
    lbound = shift  # same with reduced costs
    for i in range(n):
        bound += min(0.0, c[i])
        lbound += min(0.0, r[i])

    z = np.zeros(n)
    best = np.inf
    best_z = np.zeros(n)
    found = False
    tried = np.zeros(n, dtype=np.int64)
    nodes = 0
    d = 0
    while d >= 0:
        if d == n:
            ok = True
            for k in range(m):
                s = g0[k]
                for i in range(n):
                    s += G[k, i] * z[i]
                if s < -tol:
                    ok = False
                    break
            if ok:
                obj = 0.0
                for i in range(n):
                    obj += c[i] * z[i]
                better = False
                if not found or obj < best - tie:
                    better = True
                elif obj <= best + tie:
                    for i in range(n):
                        if z[i] != best_z[i]:
                            better = z[i] < best_z[i]
                            break
                if better:
                    best = obj
                    best_z[:] = z
                    found = True
            d -= 1
            continue

        i = order[d]
        t = tried[d]
        if t > 0:
            v = z[i]
            if v != 0.0:
                for k in range(m):
                    lhs[k] -= G[k, i]
            bound -= c[i] * v - min(0.0, c[i])
            lbound -= r[i] * v - min(0.0, r[i])
            z[i] = 0.0
        if t == 2:
            for k in range(m):
                rest[k] += pos[k, i]
            tried[d] = 0
            d -= 1
            continue
        if t == 0:
            for k in range(m):
                rest[k] -= pos[k, i]
        v = pref[i] if t == 0 else 1.0 - pref[i]
        tried[d] = t + 1
        nodes += 1
        z[i] = v
        if v != 0.0:
            for k in range(m):
                lhs[k] += G[k, i]
        bound += c[i] * v - min(0.0, c[i])
        lbound += r[i] * v - min(0.0, r[i])
        if found and max(bound, lbound) > best + tie:
            continue
        dead = False
        for k in range(m):
            if lhs[k] + rest[k] < -tol:
                dead = True
                break
        if dead:
            continue
        d += 1
    return found, best, best_z, nodes


def solve_exact(instance: IlpInstance, constraints=None, tol: float = TOLERANCE,
                multiplier_iters: int = 200) -> IlpSolution:
    """Exact minimization by depth-first branch and bound.

    ``constraints`` may be :class:`SharedConstraints`, a learned
    :class:`ConstraintSystem`, or ``None`` for the unconstrained problem.
    A node is bounded by its fixed-prefix cost plus ``min(0, c_i)`` over the
    free variables, and by the same quantity under Lagrangian reduced costs
    with multipliers fit once at the root (``multiplier_iters=0`` disables
    them). A node is also discarded when some row cannot be satisfied by any
    completion. Equal-objective optima resolve to the lexicographically
    smallest assignment.
    """
    c = instance.costs
    G, g0 = _as_rows(constraints, c.size)
    if len(g0) and multiplier_iters > 0:
        lam = _root_multipliers(c, G, g0, multiplier_iters)
    else:
        lam = np.zeros(len(g0))
    r = c - lam @ G
    order = np.argsort(-np.abs(r), kind="stable")
    found, best, z, nodes = _bnb(c, G, g0, lam, order, tol, OBJECTIVE_TIE)
    if not found:
        return IlpSolution(None, math.inf, "infeasible", int(nodes))
    z = z.astype(np.int8)
    return IlpSolution(z, float(np.dot(c, z)), "optimal", int(nodes))


def unconstrained_solution(instance: IlpInstance) -> IlpSolution:
    z = (instance.costs < 0).astype(np.int8)
    return IlpSolution(z, float(np.dot(instance.costs, z)), "optimal")


ASSIGNMENT_TEMPLATE = FeatureTemplate("assignment")


def flip_negatives(costs, z):
    """Bit flips that strictly lower the objective of ``z``."""
    costs = np.asarray(costs)
    z = np.asarray(z)
    out = []
    for i in range(len(z)):
        if (costs[i] > 0 and z[i] == 1) or (costs[i] < 0 and z[i] == 0):
            zz = z.copy()
            zz[i] = 1 - zz[i]
            out.append(zz)
    return out


def make_training_pairs(instances, solutions) -> GeneratedDataset:
    if len(instances) != len(solutions):
        raise ValueError("one solution per instance is required")
    n = instances[0].n
    positives, seen = [], set()
    for sol in solutions:
        if sol.status != "optimal":
            raise ValueError("training pairs need optimal solutions")
        key = tuple(int(v) for v in sol.assignment)
        if key not in seen:
            seen.add(key)
            positives.append(LabeledFeatureExample(np.array(key, dtype=float), 1))
    negatives, neg_seen = [], set()
    for inst, sol in zip(instances, solutions):
        for zz in flip_negatives(inst.costs, sol.assignment):
            key = tuple(int(v) for v in zz)
            if key in seen or key in neg_seen:
                continue
            neg_seen.add(key)
            negatives.append(LabeledFeatureExample(np.array(key, dtype=float), -1))
    return GeneratedDataset(positives, negatives, ASSIGNMENT_TEMPLATE, n)


@dataclass
class RecoveryMetrics:
    classification_accuracy: float
    bitwise_accuracy: float
    original_satisfied: float
    learned_satisfied: float
    baseline_bitwise_accuracy: float
    baseline_original_satisfied: float
    gold_fully_feasible: float
    infeasible_instances: list = field(default_factory=list)
    runtime_seconds: float = 0.0

    ROWS = (
        ("binary classification acc. (%)", "classification_accuracy"),
        ("bitwise solution acc. (%)", "bitwise_accuracy"),
        ("original constr. satisfied (%)", "original_satisfied"),
        ("learned constr. satisfied (%)", "learned_satisfied"),
    )

    def as_dict(self) -> dict:
        return {
            "classification_accuracy": self.classification_accuracy,
            "bitwise_accuracy": self.bitwise_accuracy,
            "original_satisfied": self.original_satisfied,
            "learned_satisfied": self.learned_satisfied,
            "baseline_bitwise_accuracy": self.baseline_bitwise_accuracy,
            "baseline_original_satisfied": self.baseline_original_satisfied,
            "gold_fully_feasible": self.gold_fully_feasible,
            "infeasible_instances": list(self.infeasible_instances),
            "runtime_seconds": self.runtime_seconds,
        }


def evaluate_recovery(test_instances, shared: SharedConstraints, learned: ConstraintSystem,
                      net: ConstraintNet, gold_solutions=None) -> RecoveryMetrics:
    """Score learned constraints against the hidden ones on held-out instances.

    All rates are percentages. A learned system that is infeasible for an
    instance falls back to the unconstrained solution and the instance index
    is listed in ``infeasible_instances``.
    """
    t0 = time.perf_counter()
    if learned.input_dim != shared.n:
        raise DimensionError(f"learned system is over {learned.input_dim} variables, expected {shared.n}")
    if gold_solutions is None:
        gold_solutions = [solve_exact(inst, shared) for inst in test_instances]
    pairs = make_training_pairs(test_instances, gold_solutions)
    cls_acc = classification_accuracy(net, pairs.examples)

    bit, orig, learn_sat, base_bit, base_orig, gold_ok = [], [], [], [], [], []
    flagged = []
    for idx, (inst, gold) in enumerate(zip(test_instances, gold_solutions)):
        sol = solve_exact(inst, learned)
        if sol.status != "optimal":
            flagged.append(idx)
            sol = unconstrained_solution(inst)
        base = unconstrained_solution(inst)
        bit.append(np.mean(sol.assignment == gold.assignment))
        orig.append(np.mean(shared.satisfied(sol.assignment)))
        base_bit.append(np.mean(base.assignment == gold.assignment))
        base_orig.append(np.mean(shared.satisfied(base.assignment)))
        v = learned.values(gold.assignment.astype(float))
        learn_sat.append(np.mean(v >= -TOLERANCE) if v.size else 1.0)
        gold_ok.append(float(v.size == 0 or v.min() >= -TOLERANCE))

    def pct(xs):
        return 100.0 * float(np.mean(xs))

    return RecoveryMetrics(100.0 * cls_acc, pct(bit), pct(orig), pct(learn_sat), pct(base_bit),
                           pct(base_orig), pct(gold_ok), flagged, time.perf_counter() - t0)


@dataclass
class RecoveryRun:
    net: ConstraintNet
    system: ConstraintSystem
    metrics: RecoveryMetrics
    config: object  # the selected TrainConfig
    selection_scores: dict


def run_recovery(shared: SharedConstraints, instances, gold, hidden_count: int = 10, seed: int = 0,
                 train_fraction: float = 0.7, epochs: int = 1000) -> RecoveryRun:
    """Learn constraints from the first ``train_fraction`` of the instances and score them on the rest.

    ``gold`` holds optimal solutions of every instance under ``shared``.
    Hyperparameters are chosen on a held-out part of the training pairs.
    """
    cut = int(round(train_fraction * len(instances)))
    if not 0 < cut < len(instances):
        raise ValueError(f"train_fraction {train_fraction} leaves an empty split")
    data = make_training_pairs(instances[:cut], gold[:cut])
    sel = select_and_train(shared.n, hidden_count, data.examples, seed=seed, epochs=epochs)
    system = extract_system(sel.net, origin="learned")
    metrics = evaluate_recovery(instances[cut:], shared, system, sel.net, gold[cut:])
    return RecoveryRun(sel.net, system, metrics, sel.config, sel.scores)


def format_metrics(metrics: RecoveryMetrics, label: str = "learned") -> str:
    lines = [f"{'metric':34s} {label:>10s}"]
    for name, attr in RecoveryMetrics.ROWS:
        lines.append(f"{name:34s} {getattr(metrics, attr):10.1f}")
    lines.append(f"{'baseline bitwise acc. (%)':34s} {metrics.baseline_bitwise_accuracy:10.1f}")
    lines.append(f"{'baseline original satisfied (%)':34s} {metrics.baseline_original_satisfied:10.1f}")
    if metrics.infeasible_instances:
        lines.append(f"learned system infeasible on test instances {metrics.infeasible_instances}")
    return "\n".join(lines)


def _fmt(x):
    return format(float(x), ".17g")


def dumps_family(shared: SharedConstraints, instances, gold=None) -> str:
    """JSON text: ``{n, m, A, b, instances: [{costs, gold_assignment?}]}``."""
    rows = ",\n  ".join("[" + ", ".join(_fmt(x) for x in row) + "]" for row in shared.matrix)
    b = ", ".join(_fmt(x) for x in shared.bounds)
    insts = []
    for i, inst in enumerate(instances):
        s = '{"costs": [' + ", ".join(_fmt(x) for x in inst.costs) + "]"
        if gold is not None and gold[i] is not None:
            s += ', "gold_assignment": [' + ", ".join(str(int(v)) for v in gold[i]) + "]"
        insts.append(s + "}")
    fid = instances[0].family_id if instances else ""
    return (f'{{"format_version": {FORMAT_VERSION}, "family_id": {json.dumps(fid)}, '
            f'"n": {shared.n}, "m": {shared.m},\n "A": [\n  {rows}],\n "b": [{b}],\n'
            f' "instances": [\n  ' + ",\n  ".join(insts) + "]\n}\n")


def loads_family(text: str):
    """Returns ``(shared, instances, gold)``; ``gold[i]`` is None when absent."""
    doc = json.loads(text)
    n, m = int(doc["n"]), int(doc["m"])
    shared = SharedConstraints(np.asarray(doc["A"], dtype=float).reshape(m, n), doc["b"])
    fid = doc.get("family_id", "")
    instances, gold = [], []
    for rec in doc["instances"]:
        inst = IlpInstance(rec["costs"], fid)
        if inst.n != n:
            raise DimensionError(f"instance has {inst.n} costs, family has n={n}")
        instances.append(inst)
        g = rec.get("gold_assignment")
        gold.append(None if g is None else np.asarray(g, dtype=np.int8))
    return shared, instances, gold
