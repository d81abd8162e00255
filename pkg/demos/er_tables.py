"""Read the bundled entity-relation inequality tables and compare them to the hand-written rules.

A relation such as Kill requires a Person on both sides. The tables are
small learned systems over one-hot label pairs; each row is a single
inequality, and the rules are recovered exactly.
"""
from relu_constraints.constraint_features import pair_vector
from relu_constraints.er_tables import eval_er_tables, load_published_system

report = eval_er_tables()
print(report.summary())

system = load_published_system("source_relation")
for src in ("Person", "Location"):
    vals = system.values(pair_vector("source_relation", src, "Kill"))
    print(f"({src}, Kill): row values {[round(float(x), 2) for x in vals]}")
