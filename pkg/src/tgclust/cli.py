"""Command-line entry point: ``tgc {gen,pretrain,train,eval,sweep,ablate}``.

Every flag can also be given in a flat JSON file passed with ``--config``
(keys are the flag names with dashes replaced by underscores); flags on
the command line win over the file.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from tgclust import bench
from tgclust import features as F
from tgclust import io
from tgclust.evaluation import evaluate
from tgclust.losses import LossWeights
from tgclust.memory import MemoryAccountant
from tgclust.model import LOG_COLUMNS, TrainConfig, train

log = logging.getLogger("tgclust")

EVAL_COLUMNS = ("dataset", "method", "seed_count", "acc", "nmi", "ari", "f1", "inertia")


def _ints(text) -> list[int]:
    if isinstance(text, (list, tuple)):
        return [int(x) for x in text]
    return [int(x) for x in str(text).replace(",", " ").split()]


def _add_dataset(p):
    p.add_argument("--edges", help="interaction file, one 'u v t' per line")
    p.add_argument("--labels", help="label file, one 'node label' per line")
    p.add_argument("--remap-out", help="where to write the 'original new' id map for sparse ids")
    # synthetic fallback when --edges is absent
    p.add_argument("--nodes", type=int, default=200)
    p.add_argument("--clusters", type=int, default=4)
    p.add_argument("--interactions", type=int, default=20_000)
    p.add_argument("--p-in", type=float, default=0.9)
    p.add_argument("--t-max", type=float, default=100.0)


def _add_train(p):
    p.add_argument("--features", help="initial feature file ('N d' header); default: pre-train")
    p.add_argument("--feature-kind", default="pretrained", choices=("pretrained", "random", "positional"))
    p.add_argument("--dim", type=int, default=128)
    p.add_argument("--modules", default="", help="comma list from x,d,c,b,s (empty: base model only)")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=1024)
    p.add_argument("--history", type=int, default=5)
    p.add_argument("--negatives", type=int, default=5)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--decay", type=float, default=1.0)
    p.add_argument("--score-mode", default="distance", choices=("distance", "dot"))
    p.add_argument("--n-clusters", type=int)
    p.add_argument("--q-exponent", type=float, default=-0.5)
    p.add_argument("--shrink", default="all", choices=("all", "assigned"))
    for m in "xdcbs":
        p.add_argument(f"--w-{m}", type=float, default=1.0, help=f"weight of module {m}")
    p.add_argument("--tau", type=float, default=0.5)


def _add_pretrain(p):
    p.add_argument("--walks", type=int, default=10)
    p.add_argument("--walk-length", type=int, default=80)
    p.add_argument("--window", type=int, default=10)
    p.add_argument("--p", type=float, default=1.0, dest="return_bias")
    p.add_argument("--q", type=float, default=1.0, dest="inout_bias")
    p.add_argument("--pretrain-epochs", type=int, default=1)
    p.add_argument("--pretrain-lr", type=float, default=0.025)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tgc", description="Temporal graph clustering toolkit")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat JSON config; command-line flags override it")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", help="output path")
    common.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="write a planted-partition dataset")
    _add_dataset(p)

    p = sub.add_parser("pretrain", parents=[common], help="write initial node features")
    _add_dataset(p)
    p.add_argument("--dim", type=int, default=128)
    p.add_argument("--feature-kind", default="pretrained", choices=("pretrained", "random", "positional", "one_hot"))
    _add_pretrain(p)

    p = sub.add_parser("train", parents=[common], help="train embeddings")
    _add_dataset(p)
    _add_train(p)
    _add_pretrain(p)
    p.add_argument("--log", help="per-batch loss CSV")
    p.add_argument("--report", help="run report JSON")

    p = sub.add_parser("eval", parents=[common], help="K-means + metrics on an embedding file")
    p.add_argument("--embeddings")
    p.add_argument("--labels")
    p.add_argument("--edges", help="only needed to resolve sparse ids in the label file")
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--dataset", default="dataset")
    p.add_argument("--method", default="tgclust")

    p = sub.add_parser("sweep", parents=[common], help="one epoch per batch size")
    _add_dataset(p)
    _add_train(p)
    _add_pretrain(p)
    p.add_argument("--batch-sizes", default="1,16,128,1024")
    p.add_argument("--timeout", type=float, default=bench.DEFAULT_SWEEP_TIMEOUT,
                   help="seconds allowed per sweep point")

    p = sub.add_parser("ablate", parents=[common], help="metrics per module subset")
    _add_dataset(p)
    _add_train(p)
    _add_pretrain(p)
    p.add_argument("--module-sets", default="base;x;d;x,d,c,b,s",
                   help="';'-separated subsets; 'base' is the empty subset")
    p.add_argument("--seeds", default="0,1,2,3,4")
    parser.subcommands = sub.choices
    return parser


def _parse(argv) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        cfg = io.RunConfig.load(args.config).values
        sub = parser.subcommands[args.command]
        known = set(vars(sub.parse_args([])))
        unknown = sorted(set(cfg) - known)
        if unknown:
            raise ValueError(f"{args.config}: unknown key(s) for '{args.command}': {', '.join(unknown)}")
        sub.set_defaults(**cfg)
        args = parser.parse_args(argv)
    return args


def _dataset(args) -> io.DatasetBundle:
    if args.edges:
        return io.load_dataset(args.edges, args.labels, dense=True, remap_out=args.remap_out)
    spec = io.SyntheticSpec(args.nodes, args.clusters, args.interactions, args.p_in, args.t_max, args.seed)
    return io.generate_synthetic(spec)


def _pretrain_cfg(args) -> F.PretrainConfig:
    return F.PretrainConfig(dim=args.dim, walks_per_node=args.walks, walk_length=args.walk_length,
                            context_window=args.window, return_bias=args.return_bias,
                            inout_bias=args.inout_bias, epochs=args.pretrain_epochs,
                            learning_rate=args.pretrain_lr, seed=args.seed)


def _features(args, bundle, kind=None) -> F.FeatureMatrix:
    if getattr(args, "features", None):
        feats = io.parse_features(args.features)
        if len(feats) != bundle.graph.node_count:
            raise ValueError(f"{args.features}: {len(feats)} rows but the graph has {bundle.graph.node_count} nodes")
        return feats
    kind = kind or args.feature_kind
    N = bundle.graph.node_count
    if kind == "random":
        return F.random_features(N, args.dim, args.seed)
    if kind == "positional":
        return F.positional_encoding(N, args.dim)
    if kind == "one_hot":
        return F.one_hot(N)
    return F.pretrain_features(bundle.graph, _pretrain_cfg(args))


def _train_cfg(args) -> TrainConfig:
    weights = LossWeights(args.w_x, args.w_d, args.w_c, args.w_b, args.w_s, args.tau)
    return TrainConfig(epochs=args.epochs, batch_size=args.batch_size, history_len=args.history,
                       n_negatives=args.negatives, learning_rate=args.lr, decay=args.decay,
                       score_mode=args.score_mode, modules=args.modules, weights=weights,
                       n_clusters=args.n_clusters, q_exponent=args.q_exponent, shrink=args.shrink,
                       seed=args.seed)


def _need_out(args) -> Path:
    if not args.out:
        raise ValueError(f"'{args.command}' needs --out")
    return Path(args.out)


def cmd_gen(args) -> int:
    out = _need_out(args)
    spec = io.SyntheticSpec(args.nodes, args.clusters, args.interactions, args.p_in, args.t_max, args.seed)
    bundle = io.generate_synthetic(spec, out)
    log.info("wrote %d interactions over %d nodes to %s", bundle.graph.num_interactions,
             bundle.graph.node_count, out)
    return 0


def cmd_pretrain(args) -> int:
    out = _need_out(args)
    bundle = _dataset(args)
    io.write_features(_features(args, bundle), out)
    return 0


def cmd_train(args) -> int:
    out = _need_out(args)
    bundle = _dataset(args)
    feats = _features(args, bundle)
    cfg = _train_cfg(args)
    acct = MemoryAccountant(bundle.graph.node_count)
    Z, trail = train(bundle.graph, feats, cfg, bundle.labeling, accountant=acct)
    io.write_features(Z.data, out)
    if args.log:
        trail.to_csv(args.log)
    if args.report:
        bench.RunReport(bench._plain(cfg), trail.epoch_loss(), trail.epoch_seconds,
                        acct.peak_aux_bytes).to_json(args.report)
    log.info("trained %d epochs; columns %s", cfg.epochs, ",".join(LOG_COLUMNS))
    return 0


def cmd_eval(args) -> int:
    if not args.embeddings or not args.labels:
        raise ValueError("'eval' needs --embeddings and --labels")
    Z = io.parse_features(args.embeddings)
    remap = None
    if args.edges:
        src, dst, _, _ = io.parse_edges(args.edges)
        label_ids = [int(f[0]) for _, f in io._records(args.labels)]
        _, _, ids = io.densify(src, dst, label_ids)
        remap = {int(o): n for n, o in enumerate(ids)}
    labeling = io.parse_labels(args.labels, len(Z), remap)
    report = evaluate(Z, labeling, seeds=_ints(args.seeds), restarts=args.restarts)
    row = {"dataset": args.dataset, "method": args.method, "seed_count": report.seed_count,
           "acc": report.acc, "nmi": report.nmi, "ari": report.ari, "f1": report.f1,
           "inertia": report.inertia}
    if args.out:
        bench.write_rows(args.out, EVAL_COLUMNS, [row])
    else:
        _print_rows(EVAL_COLUMNS, [row])
    return 0


def cmd_sweep(args) -> int:
    bundle = _dataset(args)
    feats = _features(args, bundle)
    rows = bench.sweep(bundle.graph, feats, _ints(args.batch_sizes), _train_cfg(args),
                       bundle.labeling, timeout=args.timeout, out=args.out)
    if not args.out:
        _print_rows(bench.SWEEP_COLUMNS, rows)
    return 0


def cmd_ablate(args) -> int:
    bundle = _dataset(args)
    sets = [s.strip() for s in str(args.module_sets).split(";")] if isinstance(args.module_sets, str) \
        else list(args.module_sets)
    feats = _features(args, bundle) if args.features or args.feature_kind != "pretrained" else None
    rows = bench.ablate(bundle.graph, bundle.labeling, sets, _ints(args.seeds), _train_cfg(args),
                        features=feats, pretrain=_pretrain_cfg(args), out=args.out)
    if not args.out:
        _print_rows(bench.ABLATE_COLUMNS, rows)
    return 0


def _print_rows(columns, rows):
    w = csv.DictWriter(sys.stdout, fieldnames=columns)
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


COMMANDS = {"gen": cmd_gen, "pretrain": cmd_pretrain, "train": cmd_train, "eval": cmd_eval,
            "sweep": cmd_sweep, "ablate": cmd_ablate}


def main(argv=None) -> int:
    try:
        args = _parse(argv)
    except (ValueError, OSError) as exc:
        print(f"tgc: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"tgc {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
