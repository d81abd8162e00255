"""Published entity-relation constraint tables and the hand-designed rules they should match."""
from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources

from .constraint_extraction import ConstraintSystem, is_feasible, loads_system
from .constraint_features import PAIR_ROLES, pair_labels, pair_vector


def _data(name: str) -> str:
    return resources.files("relu_constraints").joinpath("data", name).read_text()


def load_published_system(role: str) -> ConstraintSystem:
    if role not in PAIR_ROLES:
        raise ValueError(f"unknown pair role {role!r}")
    system, _ = loads_system(_data(f"er_{role}.json"))
    return system


def load_designed_constraints() -> dict:
    """``relation -> (source, target, reverse_relation)`` requirements."""
    rules = {}
    for line in _data("er_designed_constraints.tsv").splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        rel, src, tgt, rev = line.split("\t")
        rules[rel] = (src, tgt, rev)
    return rules


def designed_allows(role: str, first: str, second: str, rules=None) -> bool:
    rules = rules or load_designed_constraints()
    if role == "source_relation":
        return first == rules[second][0] if second in rules else True
    if role == "relation_target":
        return second == rules[first][1] if first in rules else True
    if role == "relation_relation":
        ok_fwd = first not in rules or second == rules[first][2]
        ok_bwd = second not in rules or first == rules[second][2]
        return ok_fwd and ok_bwd
    raise ValueError(f"unknown pair role {role!r}")


@dataclass
class AgreementReport:
    checked: dict = field(default_factory=dict)  # role -> number of pairs
    disagreements: list = field(default_factory=list)  # (role, first, second, learned, designed)

    @property
    def total(self) -> int:
        return sum(self.checked.values())

    def summary(self) -> str:
        lines = [f"{'role':20s} {'pairs':>6s} {'disagree':>9s}"]
        for role, count in self.checked.items():
            bad = sum(1 for d in self.disagreements if d[0] == role)
            lines.append(f"{role:20s} {count:6d} {bad:9d}")
        lines.append(f"{'total':20s} {self.total:6d} {len(self.disagreements):9d}")
        for role, a, b, learned, designed in self.disagreements:
            lines.append(f"  {role}: ({a}, {b}) learned={'allow' if learned else 'forbid'} "
                         f"designed={'allow' if designed else 'forbid'}")
        return "\n".join(lines)

    def as_dict(self) -> dict:
        return {"checked": dict(self.checked), "total": self.total,
                "disagreements": [list(d) for d in self.disagreements]}


def eval_er_tables(systems=None) -> AgreementReport:
    """Compare learned-table feasibility with the designed rules over every label pair."""
    rules = load_designed_constraints()
    report = AgreementReport()
    for role in PAIR_ROLES:
        system = (systems or {}).get(role)
        if system is None:
            system = load_published_system(role)
        first, second = pair_labels(role)
        report.checked[role] = len(first) * len(second)
        for a in first:
            for b in second:
                learned = is_feasible(system, pair_vector(role, a, b))
                designed = designed_allows(role, a, b, rules)
                if learned != designed:
                    report.disagreements.append((role, a, b, learned, designed))
    return report
