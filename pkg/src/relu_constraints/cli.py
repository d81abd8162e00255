"""Command-line entry points.

Every subcommand takes long-form flags. ``--config FILE`` reads a JSON
object whose keys are flag names (dashes or underscores) and whose values
override the flags. Outputs are written to a temporary file and renamed.
Exit status: 0 success, 1 runtime error, 2 usage or config error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import constraint_extraction as cx
from . import constraint_features as cf
from . import ilp, planted, sequence
from .er_tables import eval_er_tables
from .rectifier_net import TrainConfig, dumps_net, loads_net, select_and_train, train

CONFIG_VERSION = 1


class UsageError(Exception):
    pass


def _write(path, text: str) -> None:
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w") as f:
        f.write(text)
    os.replace(tmp, path)


def _read(path) -> str:
    try:
        with open(path) as f:
            return f.read()
    except FileNotFoundError:
        raise FileNotFoundError(f"input file not found: {path}") from None


def _json(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def _template_from_args(args) -> cf.FeatureTemplate:
    kind = args.template.replace("-", "_")
    scheme = getattr(args, "negative_scheme", "enumerate").replace("-", "_")
    return cf.FeatureTemplate(kind, args.n, getattr(args, "role", None), scheme)


def _effective(args) -> dict:
    skip = {"command", "config", "func"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_ilp(args):
    shared, instances = ilp.generate_family(args.n, args.m, args.count, args.seed)
    gold = None
    if not args.no_solve:
        sols = [ilp.solve_exact(inst, shared) for inst in instances]
        gold = [s.assignment for s in sols]
    _write(args.out, ilp.dumps_family(shared, instances, gold))
    print(f"wrote {len(instances)} instances (n={args.n}, m={args.m}) to {args.out}")


def _load_family(path):
    shared, instances, gold = ilp.loads_family(_read(path))
    return shared, instances, gold


def _gold_solutions(shared, instances, gold):
    out = []
    for inst, g in zip(instances, gold):
        if g is None:
            out.append(ilp.solve_exact(inst, shared))
        else:
            out.append(ilp.IlpSolution(g, float(inst.costs @ g), "optimal"))
    return out


def cmd_solve_ilp(args):
    shared, instances, _ = _load_family(args.family)
    constraints = shared
    if args.system:
        constraints, _ = cx.loads_system(_read(args.system))
    rows = []
    for inst in instances:
        sol = ilp.solve_exact(inst, constraints)
        rows.append({"status": sol.status,
                     "objective": None if sol.assignment is None else sol.objective,
                     "assignment": None if sol.assignment is None else [int(v) for v in sol.assignment]})
    _write(args.out, _json({"config": _effective(args), "solutions": rows}))
    bad = sum(r["status"] != "optimal" for r in rows)
    print(f"solved {len(rows)} instances, {bad} infeasible")


def _learning_data(args):
    """``(dataset, meta)`` for the chosen data source."""
    if args.family:
        shared, instances, gold = _load_family(args.family)
        cut = int(round(args.train_fraction * len(instances)))
        sols = _gold_solutions(shared, instances[:cut], gold[:cut])
        data = ilp.make_training_pairs(instances[:cut], sols)
        return data, {"template": data.template.as_dict()}
    if args.relations:
        if not args.role:
            raise UsageError("--relations needs --role")
        records = cf.read_relation_records(args.relations)
        data = cf.pair_indicator_examples(records, args.role)
        return data, {"template": data.template.as_dict()}
    if not args.data:
        raise UsageError("one of --data, --family or --relations is required")
    corpus = cf.read_conll(args.data, check_iob=args.check_iob)
    vocab = cf.LabelVocab.from_corpus(corpus)
    template = _template_from_args(args)
    data = cf.make_dataset(template, corpus, vocab, seed=args.seed)
    return data, {"template": template.as_dict(), "vocab": vocab.as_dict()}


def cmd_learn(args):
    data, meta = _learning_data(args)
    if args.select:
        res = select_and_train(data.dim, args.hidden, data.examples, seed=args.seed, epochs=args.epochs)
        net, cfg = res.net, res.config
    else:
        cfg = TrainConfig(learning_rate=args.learning_rate, lr_decay=args.lr_decay, epochs=args.epochs,
                          seed=args.seed, batch_size=args.batch_size)
        net, _ = train(data.dim, args.hidden, data.examples, cfg)
    meta["train_config"] = {"learning_rate": cfg.learning_rate, "lr_decay": cfg.lr_decay,
                            "epochs": cfg.epochs, "seed": cfg.seed}
    meta["examples"] = {"positive": len(data.positives), "negative": len(data.negatives)}
    _write(args.out, dumps_net(net, **meta))
    print(f"trained K={args.hidden} on {len(data.positives)} positives / {len(data.negatives)} negatives "
          f"(lr={cfg.learning_rate}, decay={cfg.lr_decay}) -> {args.out}")


def cmd_extract(args):
    net, meta = loads_net(_read(args.net))
    system = cx.extract_system(net, origin="learned")
    keep = {k: meta[k] for k in ("template", "vocab") if k in meta}
    _write(args.out, cx.dumps_system(system, **keep))
    print(f"{len(system)} inequalities over {system.input_dim} features -> {args.out}")


def _recovery_report(args, run: ilp.RecoveryRun) -> dict:
    m = run.metrics.as_dict()
    m.pop("runtime_seconds")
    return {"format_version": CONFIG_VERSION, "kind": "ilp_recovery", "config": _effective(args),
            "selected": {"learning_rate": run.config.learning_rate, "lr_decay": run.config.lr_decay},
            "metrics": m}


def cmd_eval_ilp(args):
    shared, instances, gold = _load_family(args.family)
    sols = _gold_solutions(shared, instances, gold)
    run = ilp.run_recovery(shared, instances, sols, args.hidden, args.seed, args.train_fraction, args.epochs)
    if args.artifacts:
        os.makedirs(args.artifacts, exist_ok=True)
        _write(os.path.join(args.artifacts, "net.json"), dumps_net(run.net))
        _write(os.path.join(args.artifacts, "system.json"), cx.dumps_system(run.system))
    _write(args.out, _json(_recovery_report(args, run)))
    print(ilp.format_metrics(run.metrics, f"K={args.hidden}"))


def cmd_seq_train(args):
    corpus = cf.read_conll(args.data, check_iob=args.check_iob)
    cfg = sequence.MarkovTrainConfig(args.trade_off, args.epochs, args.seed, args.mode.replace("-", "_"),
                                     args.learning_rate)
    model = sequence.train_markov(corpus, cfg)
    _write(args.out, sequence.dumps_model(model))
    print(f"trained {cfg.mode} tagger on {len(corpus)} sequences -> {args.out}")


def _systems(paths, labels):
    out, vocab = [], None
    for p in paths:
        system, meta = cx.loads_system(_read(p))
        if "template" not in meta:
            raise UsageError(f"{p}: constraint system carries no feature template")
        template = cf.FeatureTemplate.from_dict(meta["template"])
        v = cf.LabelVocab(meta["vocab"]["labels"], meta["vocab"].get("pos_values", ())) \
            if "vocab" in meta else cf.LabelVocab(labels)
        if tuple(v.labels) != tuple(labels):
            raise UsageError(f"{p}: label set {v.labels} does not match the tagger's {tuple(labels)}")
        if vocab is not None and vocab != v:
            raise UsageError("constraint systems were learned with different vocabularies")
        vocab = v
        out.append((system, template))
    return out, vocab


def cmd_seq_decode(args):
    if bool(args.model) == bool(args.scores):
        raise UsageError("exactly one of --model and --scores is required")
    if args.model:
        model = sequence.loads_model(_read(args.model))
        if not args.data:
            raise UsageError("--model needs --data")
        sentences = cf.read_conll(args.data)
    else:
        sf = sequence.read_score_file(args.scores)
        model = sf.model()
        sentences = sf.matrices
        if args.data:
            seqs = cf.read_conll(args.data)
            if len(seqs) != len(sentences):
                raise UsageError(f"{len(seqs)} sequences in --data but {len(sentences)} score blocks")
            # tokens and POS for window templates, emissions from the score file
            sentences = [sequence.ScoreMatrix(mat.emissions, seq) for seq, mat in zip(seqs, sf.matrices)]
    systems, vocab = _systems(args.systems, model.labels)
    out, gold, fallback_hits = [], [], 0
    for item in sentences:
        seq = item if isinstance(item, cf.TaggedSequence) else getattr(item, "sequence", None)
        ids = sequence.beam_decode(model, item, systems, args.beam, args.fallback, args.mode, vocab)
        if ids is None:
            fallback_hits += 1
            ids = []
        labels = model.label_names(ids)
        n = len(seq) if seq is not None else len(item)
        tokens = seq.tokens if seq is not None else [f"t{i}" for i in range(n)]
        pos = seq.pos_tags if seq is not None else []
        out.append(cf.TaggedSequence(tokens, labels or ["_"] * n, pos))
        if seq is not None and labels:
            gold.append((labels, seq.labels))
    _write(args.out, cf.format_conll(out))
    if gold and args.model:
        acc = sequence.corpus_token_accuracy([g[0] for g in gold], [g[1] for g in gold])
        print(f"token accuracy {100 * acc:.2f}% over {len(gold)} sequences")
    if fallback_hits:
        print(f"{fallback_hits} sequences had no feasible decoding (written as '_')")


def cmd_eval_er_tables(args):
    report = eval_er_tables()
    print(report.summary())
    if args.out:
        _write(args.out, _json({"format_version": CONFIG_VERSION, "kind": "er_tables", **report.as_dict()}))
    return 0 if not report.disagreements else 1


def cmd_report(args):
    reports = [json.loads(_read(p)) for p in args.inputs]
    rows = [(name, attr) for name, attr in ilp.RecoveryMetrics.ROWS]
    rows += [("baseline bitwise acc. (%)", "baseline_bitwise_accuracy"),
             ("baseline original satisfied (%)", "baseline_original_satisfied")]
    heads = []
    for p, r in zip(args.inputs, reports):
        if r.get("kind") != "ilp_recovery":
            raise UsageError(f"{p}: not an ILP recovery report")
        heads.append(f"K={r['config'].get('hidden', '?')}")
    lines = [f"{'metric':34s}" + "".join(f"{h:>10s}" for h in heads)]
    table = {}
    for name, attr in rows:
        vals = [r["metrics"][attr] for r in reports]
        table[attr] = vals
        lines.append(f"{name:34s}" + "".join(f"{v:10.1f}" for v in vals))
    print("\n".join(lines))
    if args.out:
        _write(args.out, _json({"format_version": CONFIG_VERSION, "kind": "ilp_table", "columns": heads,
                                "inputs": list(args.inputs), "rows": table}))


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="relu-constraints", description=__doc__.splitlines()[0])
    p.add_argument("--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="JSON file whose keys override flags")
        sp.set_defaults(func=func)
        return sp

    def seed(sp):
        sp.add_argument("--seed", type=int, required=True)

    sp = add("gen-ilp", cmd_gen_ilp, "generate a family of ILPs with hidden shared constraints")
    sp.add_argument("--n", type=int, default=50)
    sp.add_argument("--m", type=int, default=ilp.DEFAULT_CONSTRAINTS)
    sp.add_argument("--count", type=int, default=100)
    sp.add_argument("--no-solve", action="store_true", help="skip computing gold solutions")
    sp.add_argument("--out", default="family.json")
    seed(sp)

    sp = add("solve-ilp", cmd_solve_ilp, "solve every instance of a family")
    sp.add_argument("--family", required=True)
    sp.add_argument("--system", help="learned constraint system to use instead of the hidden one")
    sp.add_argument("--out", default="solutions.json")

    sp = add("learn", cmd_learn, "train a rectifier network on generated examples")
    sp.add_argument("--data", help="column-format corpus")
    sp.add_argument("--family", help="ILP family file (learns from the training split)")
    sp.add_argument("--relations", help="entity-relation records file")
    sp.add_argument("--role", choices=cf.PAIR_ROLES)
    sp.add_argument("--template", default="ngram-labels",
                    choices=[k.replace("_", "-") for k in cf.GLOBAL_KINDS + cf.LOCAL_KINDS])
    sp.add_argument("--n", type=int, default=2)
    sp.add_argument("--negative-scheme", default="enumerate", choices=["enumerate", "random-label"])
    sp.add_argument("--check-iob", action="store_true")
    sp.add_argument("--train-fraction", type=float, default=0.7)
    sp.add_argument("--hidden", type=int, default=10)
    sp.add_argument("--epochs", type=int, default=1000)
    sp.add_argument("--learning-rate", type=float, default=0.01)
    sp.add_argument("--lr-decay", type=float, default=0.0)
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--select", action="store_true", help="grid-search learning rate and decay")
    sp.add_argument("--out", default="net.json")
    seed(sp)

    sp = add("extract", cmd_extract, "convert a trained net into linear inequalities")
    sp.add_argument("--net", required=True)
    sp.add_argument("--out", default="system.json")

    sp = add("eval-ilp", cmd_eval_ilp, "learn constraints on a family and report recovery metrics")
    sp.add_argument("--family", required=True)
    sp.add_argument("--hidden", type=int, default=10)
    sp.add_argument("--train-fraction", type=float, default=0.7)
    sp.add_argument("--epochs", type=int, default=1000)
    sp.add_argument("--artifacts", help="directory for the learned net and system")
    sp.add_argument("--out", default="ilp_report.json")
    seed(sp)

    sp = add("seq-train", cmd_seq_train, "train a first-order tagger")
    sp.add_argument("--data", required=True)
    sp.add_argument("--mode", default="structured-hinge", choices=["structured-hinge", "averaged-perceptron"])
    sp.add_argument("--epochs", type=int, default=10)
    sp.add_argument("--trade-off", type=float, default=0.0)
    sp.add_argument("--learning-rate", type=float, default=0.1)
    sp.add_argument("--check-iob", action="store_true")
    sp.add_argument("--out", default="tagger.json")
    seed(sp)

    sp = add("seq-decode", cmd_seq_decode, "beam decoding with learned constraint systems")
    sp.add_argument("--model", help="tagger file from seq-train")
    sp.add_argument("--scores", help="score-matrix file")
    sp.add_argument("--data", help="column-format corpus to decode (or to supply tokens for --scores)")
    sp.add_argument("--systems", nargs="*", default=[])
    sp.add_argument("--beam", type=int, default=50)
    sp.add_argument("--fallback", action=argparse.BooleanOptionalAction, default=True)
    sp.add_argument("--mode", default="prune", choices=["prune", "rerank"])
    sp.add_argument("--out", default="decoded.conll")

    sp = add("eval-er-tables", cmd_eval_er_tables, "check the bundled entity-relation tables")
    sp.add_argument("--out")

    sp = add("report", cmd_report, "tabulate ILP recovery reports side by side")
    sp.add_argument("--inputs", nargs="+", required=True)
    sp.add_argument("--out")

    sp = add("planted-corpus", cmd_planted, "write the bundled planted-rule corpus split")
    sp.add_argument("--train-out", default="planted_train.conll")
    sp.add_argument("--test-out", default="planted_test.conll")
    return p


def cmd_planted(args):
    train_part, test_part = planted.split(planted.load_bundled())
    _write(args.train_out, cf.format_conll(train_part))
    _write(args.test_out, cf.format_conll(test_part))
    print(f"{len(train_part)} training and {len(test_part)} test sequences; "
          f"{planted.FORBIDDEN[0]} is never followed by {planted.FORBIDDEN[1]}")


def _apply_config(parser, args):
    if not args.config:
        return args
    try:
        doc = json.loads(_read(args.config))
    except json.JSONDecodeError as e:
        raise UsageError(f"{args.config}: invalid JSON ({e})") from None
    if not isinstance(doc, dict):
        raise UsageError(f"{args.config}: expected a JSON object")
    allowed = set(vars(args)) - {"command", "config", "func"}
    for key, value in doc.items():
        if key == "format_version":
            if value != CONFIG_VERSION:
                raise UsageError(f"{args.config}: unsupported format_version {value!r}")
            continue
        dest = key.replace("-", "_")
        if dest not in allowed:
            raise UsageError(f"{args.config}: unknown key {key!r}")
        setattr(args, dest, value)
    return args


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args = _apply_config(parser, args)
        status = args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (ValueError, RuntimeError, KeyError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return int(status or 0)


def main():
    sys.exit(run())
