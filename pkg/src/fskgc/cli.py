"""Command-line entry point: train, evaluate, task-sim, synth, inspect.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric error.
Flag precedence is CLI flag > config file > built-in default, for every
training-config field.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import TrainConfig
from .errors import ContractError, DataError, NumericError
from .kgdata import SynthSpec, load_dataset, synth_generate, write_bundle


class UsageError(ContractError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


_CONFIG_FLAGS = [
    # (flag, dest, type, help)
    ("--shots", "shots", int, "support-set size K"),
    ("--dim", "dim", int, "embedding dimension"),
    ("--margin", "margin", float, "ranking-loss margin"),
    ("--lambda", "lam", float, "contrastive-loss weight"),
    ("--tau", "tau", float, "contrastive temperature"),
    ("--wl-depth", "wl_depth", int, "edge-neighborhood depth"),
    ("--lr", "lr", float, "outer learning rate"),
    ("--inner-lr", "inner_lr", float, "inner adaptation rate"),
    ("--batch", "batch", int, "episodes per outer step"),
    ("--warmup-steps", "warmup_steps", int, "steps before transfer starts"),
    ("--max-steps", "max_steps", int, "total outer steps"),
    ("--eval-every", "eval_every", int, "validation interval in steps"),
    ("--seed", "seed", int, "master random seed"),
    ("--queries", "queries", int, "query pairs per training episode"),
    ("--context-cap", "context_cap", int, "max context tuples per triple"),
    ("--false-contexts", "false_contexts", int, "negatives per context"),
    ("--heads", "heads", int, "relation-learner attention heads"),
    ("--msa-heads", "msa_heads", int, "context-encoder attention heads"),
    ("--pretrain-epochs", "pretrain_epochs", int,
     "translational pretraining epochs when no embeddings are supplied"),
]


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None,
                        help="TOML config file")
    for flag, dest, typ, help_text in _CONFIG_FLAGS:
        parser.add_argument(flag, dest=dest, type=typ, default=None,
                            help=help_text)
    parser.add_argument("--transfer", dest="transfer", default=None,
                        action=argparse.BooleanOptionalAction,
                        help="enable cross-task transfer")
    parser.add_argument("--meta", dest="meta", default=None,
                        action=argparse.BooleanOptionalAction,
                        help="enable the task-conditioned inner step")


def resolve_config(args: argparse.Namespace,
                   defaults: TrainConfig | None = None) -> TrainConfig:
    if getattr(args, "config", None) is not None:
        base = TrainConfig.from_toml(args.config)
    elif defaults is not None:
        base = defaults
    else:
        base = TrainConfig()
    overrides = {
        name: getattr(args, name)
        for name in TrainConfig.field_names()
        if hasattr(args, name)
    }
    return base.override(**overrides)


def _checkpoint_defaults(checkpoint: Path) -> TrainConfig | None:
    sidecar = checkpoint.parent / "config.json"
    if sidecar.exists():
        raw = json.loads(sidecar.read_text(encoding="utf-8"))
        return TrainConfig(**raw)
    return None


def cmd_train(args) -> int:
    from .metatrain import train

    config = resolve_config(args)
    bundle = load_dataset(args.data, dim=config.dim, seed=config.seed)
    result = train(bundle, config, args.out)
    print(f"trained {result.steps} steps; best validation MRR "
          f"{max(result.best_mrr, 0.0):.4f}")
    print(f"checkpoints: {result.best_path} {result.last_path}")
    return 0


def cmd_evaluate(args) -> int:
    from .evalkit import evaluate_split, per_relation_tsv, report_json, \
        report_text
    from .model import Model

    config = resolve_config(args, _checkpoint_defaults(args.checkpoint))
    bundle = load_dataset(args.data, dim=config.dim, seed=config.seed)
    model = Model.create(bundle, config)
    model.load(args.checkpoint)
    report = evaluate_split(bundle, args.split, model, config,
                            transfer=config.transfer, raw=args.raw,
                            workers=args.workers)
    names = {i: n for i, n in enumerate(bundle.graph.relations.id2name)}
    if args.format == "json":
        print(report_json(report))
    else:
        print(report_text(report, names))
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(report_json(report) + "\n",
                                         encoding="utf-8")
        (out / "per_relation.tsv").write_text(per_relation_tsv(report, names),
                                              encoding="utf-8")
    return 0


def cmd_task_sim(args) -> int:
    from .model import Model
    from .taskgraph import similarity_matrix

    config = resolve_config(args, _checkpoint_defaults(args.checkpoint)
                            if args.checkpoint else None)
    bundle = load_dataset(args.data, dim=config.dim, seed=config.seed)
    model = Model.create(bundle, config)
    if args.checkpoint is not None:
        model.load(args.checkpoint)
    names, matrix = similarity_matrix(
        bundle, model.bank.rel_emb, model.mp, model.sim_head,
        config.shots, config.wl_depth,
    )
    lines = ["\t".join(["task"] + names)]
    for name, row in zip(names, matrix):
        lines.append("\t".join([name] + [f"{v:.6f}" for v in row]))
    text = "\n".join(lines) + "\n"
    if args.out is not None:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_synth(args) -> int:
    spec = SynthSpec(
        entities=args.entities, relations=args.relations,
        triples_per_relation=args.triples_per_relation, groups=args.groups,
        overlap=args.overlap, noise=args.noise,
        head_fraction=args.head_fraction,
        bg_relations_per_group=args.bg_relations,
        bg_degree=args.bg_degree,
    )
    bundle = synth_generate(spec, np.random.default_rng(args.seed))
    write_bundle(bundle, args.out)
    stats = bundle.stats()
    print(f"wrote synthetic bundle to {args.out}: "
          f"relations={stats['relations']} entities={stats['entities']} "
          f"triples={stats['triples']} tasks={stats['tasks']}")
    return 0


def cmd_inspect(args) -> int:
    bundle = load_dataset(args.data)
    stats = bundle.stats()
    print(f"relations={stats['relations']} entities={stats['entities']} "
          f"triples={stats['triples']} tasks={stats['tasks']}")
    for split in ("train", "valid", "test"):
        rels = bundle.task_relations(split)
        n_triples = sum(len(bundle.tasks[split][r]) for r in rels)
        print(f"{split}: {len(rels)} tasks, {n_triples} triples")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="fskgc",
                     description="few-shot KG completion toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="meta-train on a dataset")
    p_train.add_argument("--data", type=Path, required=True)
    p_train.add_argument("--out", type=Path, required=True)
    _add_config_flags(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("evaluate", help="rank queries of a split")
    p_eval.add_argument("--data", type=Path, required=True)
    p_eval.add_argument("--checkpoint", type=Path, required=True)
    p_eval.add_argument("--split", choices=["train", "valid", "test"],
                        default="test")
    p_eval.add_argument("--raw", action="store_true",
                        help="rank against unfiltered candidates")
    p_eval.add_argument("--format", choices=["json", "text"], default="text")
    p_eval.add_argument("--workers", type=int, default=1)
    p_eval.add_argument("--out", type=Path, default=None)
    _add_config_flags(p_eval)
    p_eval.set_defaults(func=cmd_evaluate)

    p_sim = sub.add_parser("task-sim", help="emit the task-similarity matrix")
    p_sim.add_argument("--data", type=Path, required=True)
    p_sim.add_argument("--checkpoint", type=Path, default=None)
    p_sim.add_argument("--out", type=Path, default=None)
    _add_config_flags(p_sim)
    p_sim.set_defaults(func=cmd_task_sim)

    p_synth = sub.add_parser("synth", help="generate a synthetic bundle")
    p_synth.add_argument("--out", type=Path, required=True)
    p_synth.add_argument("--entities", type=int, default=200)
    p_synth.add_argument("--relations", type=int, default=12)
    p_synth.add_argument("--triples-per-relation", type=int, default=30)
    p_synth.add_argument("--groups", type=int, default=3)
    p_synth.add_argument("--overlap", type=float, default=0.7)
    p_synth.add_argument("--noise", type=float, default=0.1)
    p_synth.add_argument("--head-fraction", type=float, default=0.6)
    p_synth.add_argument("--bg-relations", type=int, default=2)
    p_synth.add_argument("--bg-degree", type=int, default=3)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.set_defaults(func=cmd_synth)

    p_inspect = sub.add_parser("inspect", help="print dataset statistics")
    p_inspect.add_argument("--data", type=Path, required=True)
    p_inspect.set_defaults(func=cmd_inspect)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except ContractError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
