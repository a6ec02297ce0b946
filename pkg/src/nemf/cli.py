"""Command-line front end: ``nemf <subcommand> [flags]``.

Subcommands: ingest, train, recommend, explain, evaluate, sweep, compare.
A ``--config`` YAML file overrides flag values.  Outputs go to
``--output-dir`` (default ``$NEMF_OUTPUT_DIR`` or ``./nemf-out``) together
with a ``config.json`` holding every resolved setting.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import kfold_split, load_dataset
from .errors import ConfigError, NemfError
from .explainability import (ExplainConfig, build_user_style_E, explainability_from_histogram,
                             max_explainability, neighbor_histogram, normalize)
from .factorization import FactorModel, TrainConfig, train
from .harness import (Cell, ExperimentSpec, compare_table, default_output_dir, load_config,
                      run_experiment, select_tradeoff, sensitivity_sweep, table4_grid,
                      write_resolved_config)
from .metrics import METRICS, EvalReport
from .neighborhood import build_graph
from .novelty import KINDS, build_N_matrix
from .ranking import export_lists, recommend_all

log = logging.getLogger("nemf")

DEFAULT_FACTORS = {"ml100k": 80, "ml1m": 50}
TRAIN_KEYS = ("factors", "lr", "beta", "lam", "delta", "norm", "epochs", "init_scale")


class UsageError(NemfError):
    pass


# ---------------------------------------------------------------- parsing

def _common(p, dataset=True):
    if dataset:
        p.add_argument("--dataset", help="MovieLens directory (u.data/u.item or ratings.dat/movies.dat)")
        p.add_argument("--format", choices=("ml100k", "ml1m"), default="ml100k")
    p.add_argument("--config", help="YAML file; its values override flags")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output-dir", default=None, help="default: $NEMF_OUTPUT_DIR or ./nemf-out")


def _explain_flags(p):
    p.add_argument("-k", "--neighbors", dest="k", type=int, default=10, help="neighbourhood size (10)")
    p.add_argument("--p-tau", type=int, default=4, help="lowest positive rating (4)")
    p.add_argument("--min-overlap", type=int, default=2, help="co-rated items needed for a non-zero similarity (2)")


def _train_flags(p):
    p.add_argument("--factors", type=int, default=None, help="latent factors (80 for ml100k, 50 for ml1m)")
    p.add_argument("--lr", type=float, default=0.001, help="learning rate eta (0.001)")
    p.add_argument("--beta", type=float, default=0.02, help="L2 regularisation (0.02)")
    p.add_argument("--lam", type=float, default=0.0, help="explainability weight lambda (0)")
    p.add_argument("--delta", type=float, default=0.0, help="novelty weight delta (0)")
    p.add_argument("--norm", choices=("L1", "L2"), default="L1")
    p.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    p.add_argument("--init-scale", type=float, default=0.1)


def _novelty_flags(p):
    p.add_argument("--novelty", choices=KINDS, default="distance", help="novelty model (distance)")
    p.add_argument("--train-novelty", choices=KINDS, default=None, help="novelty model of the training weights (same as --novelty)")


def _list_flags(p):
    p.add_argument("-n", "--top-n", dest="n", type=int, default=10, help="list length (10)")
    p.add_argument("--reranker", choices=("none", "mmr"), default="none")
    p.add_argument("--mmr-lambda", type=float, default=0.5, help="MMR relevance/diversity trade-off (0.5)")
    p.add_argument("--mmr-pool", type=int, default=100)


def _fold_flags(p):
    p.add_argument("--folds", type=int, default=4)
    p.add_argument("--fold", type=int, default=None, help="use the train split of this fold instead of all ratings")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nemf", description="Explainable and novel matrix factorisation experiments")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse a dataset and report statistics")
    _common(p)
    p.add_argument("--folds", type=int, default=4)

    p = sub.add_parser("train", help="train one factor model")
    _common(p)
    _train_flags(p)
    _explain_flags(p)
    _novelty_flags(p)
    _fold_flags(p)

    p = sub.add_parser("recommend", help="top-N lists from a trained model")
    _common(p)
    _list_flags(p)
    _fold_flags(p)
    p.add_argument("--model", required=True, help="model.npz written by 'train'")
    p.add_argument("--user", type=int, action="append", help="external user id (repeatable; default all)")

    p = sub.add_parser("explain", help="neighbour-rating explanation for one user and item")
    _common(p)
    _explain_flags(p)
    _fold_flags(p)
    p.add_argument("--user", type=int, required=True, help="external user id")
    p.add_argument("--item", type=int, required=True, help="external item id")
    p.add_argument("--model", help="optional model.npz; adds the predicted score")

    for name, text in (("evaluate", "cross-validated comparison (six-algorithm grid by default)"),
                       ("sweep", "cross-validated sensitivity sweep over lambda or delta")):
        p = sub.add_parser(name, help=text)
        _common(p)
        _train_flags(p)
        _explain_flags(p)
        _novelty_flags(p)
        _list_flags(p)
        p.add_argument("--folds", type=int, default=4)
        p.add_argument("--theta", type=float, default=0.0, help="explainability threshold of MEP (0)")
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--cache-dir", default=None, help="neighbour graph cache")
        if name == "evaluate":
            p.set_defaults(lam=0.2, delta=0.4)
        if name == "sweep":
            p.add_argument("--param", choices=("lam", "delta", "both"), required=True)
            p.add_argument("--values", required=True,
                           help="comma list, e.g. 0,0.2,0.4; for 'both' use lam:delta pairs")

    p = sub.add_parser("compare", help="print a comparison table of report.json files")
    p.add_argument("reports", nargs="+")
    p.add_argument("--p-values", action="store_true", help="also print paired t-test p-values")
    return parser


# ------------------------------------------------------------------ helpers

def _apply_config(args, allowed=None):
    """Overlay ``--config`` values on the parsed flags; unknown keys are errors."""
    if not getattr(args, "config", None):
        return {}
    data = load_config(args.config)
    extra = {}
    for key, value in data.items():
        dest = key.replace("-", "_")
        if hasattr(args, dest) and dest not in ("command", "config"):
            setattr(args, dest, value)
        elif allowed is not None and key in allowed:
            extra[key] = value
        else:
            raise ConfigError(f"{args.config}: unknown key {key!r}")
    return extra


def _output_dir(args) -> Path:
    out = Path(args.output_dir or default_output_dir())
    out.mkdir(parents=True, exist_ok=True)
    return out


def _resolved(args, **extra) -> dict:
    d = {k: v for k, v in vars(args).items() if k not in ("config",)}
    d.update(extra)
    d["version"] = __version__
    return d


def _need_dataset(args):
    if not args.dataset:
        raise UsageError("--dataset is required")
    if not Path(args.dataset).is_dir():
        raise UsageError(f"dataset directory {args.dataset!r} does not exist")
    return load_dataset(args.dataset, args.format)


def _train_split(args, matrix):
    if args.fold is None:
        return matrix
    folds = kfold_split(matrix, args.folds, args.seed)
    if not 0 <= args.fold < len(folds):
        raise UsageError(f"--fold must lie in [0, {len(folds) - 1}]")
    return matrix.subset(folds.folds[args.fold][0])


def _train_config(args) -> TrainConfig:
    if args.factors is None:
        args.factors = DEFAULT_FACTORS[args.format] if hasattr(args, "format") else 80
    return TrainConfig(factors=args.factors, lr=args.lr, beta=args.beta, lam=args.lam, delta=args.delta,
                       norm=args.norm, epochs=args.epochs, seed=args.seed, init_scale=args.init_scale)


def _reranker(args):
    return None if args.reranker in (None, "none") else args.reranker


# --------------------------------------------------------------- commands

def cmd_ingest(args):
    _apply_config(args)
    matrix, catalog = _need_dataset(args)
    folds = kfold_split(matrix, args.folds, args.seed)
    density = len(matrix) / (matrix.n_users * matrix.n_items)
    masks = catalog.masks_for(matrix.item_ids)
    genres = float(np.mean([bin(int(m)).count("1") for m in masks]))
    summary = {
        "ratings": len(matrix), "users": matrix.n_users, "items": matrix.n_items,
        "density": density, "genres": len(catalog.genres), "genres_per_item": genres,
        "rating_histogram": {int(r): int(c) for r, c in zip(*np.unique(matrix.ratings, return_counts=True))},
        "fingerprint": matrix.fingerprint(), "folds": args.folds, "fold_digest": folds.digest(),
    }
    out = _output_dir(args)
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
    write_resolved_config(_resolved(args), out)
    print(f"{summary['ratings']} ratings, {summary['users']} users, {summary['items']} items "
          f"(density {density:.4f}, {genres:.2f} genres per item)")
    print(f"fold digest {summary['fold_digest']}")
    return 0


def cmd_train(args):
    _apply_config(args)
    matrix, catalog = _need_dataset(args)
    cfg = _train_config(args)
    data = _train_split(args, matrix)
    ecfg = ExplainConfig(args.k, args.p_tau).check()
    E = N = None
    if cfg.lam > 0:
        graph = build_graph(data, ecfg.k, min_overlap=args.min_overlap)
        E = normalize(build_user_style_E(data, graph, ecfg), ecfg)
    if cfg.delta > 0:
        kind = args.train_novelty or args.novelty
        N = build_N_matrix(data, catalog.masks_for(data.item_ids), kind, normalize=True)
    model = train(data, E, N, cfg, callback=lambda ep, err, m: log.info("epoch %d rmse %.5f", ep, err))
    out = _output_dir(args)
    model.save(out / "model.npz")
    with open(out / "train.log", "w") as fh:
        for ep, err in enumerate(model.log, start=1):
            fh.write(f"{ep} {err!r}\n")
    write_resolved_config(_resolved(args, train=cfg.to_dict()), out)
    print(f"trained {cfg.epochs} epochs, final train RMSE {model.log[-1]:.4f}; model in {out / 'model.npz'}")
    return 0


def _load_model(path, matrix) -> FactorModel:
    model = FactorModel.load(path)
    if model.n_users != matrix.n_users or model.n_items != matrix.n_items:
        raise UsageError(f"model shape {model.n_users}x{model.n_items} does not match "
                         f"dataset {matrix.n_users}x{matrix.n_items}")
    return model


def cmd_recommend(args):
    _apply_config(args)
    matrix, catalog = _need_dataset(args)
    data = _train_split(args, matrix)
    model = _load_model(args.model, matrix)
    users = [matrix.user_index(u) for u in args.user] if args.user else range(matrix.n_users)
    lists = recommend_all(model, data, users, args.n, reranker=_reranker(args), pool=args.mmr_pool,
                          masks=catalog.masks_for(matrix.item_ids), mmr_lambda=args.mmr_lambda)
    out = _output_dir(args)
    export_lists(lists, out / "recommendations.txt", matrix)
    write_resolved_config(_resolved(args), out)
    if args.user:
        for u in lists:
            print(f"user {matrix.user_ids[u]}:")
            for rank, (i, s) in enumerate(zip(lists[u].items, lists[u].scores), start=1):
                iid = int(matrix.item_ids[i])
                print(f"  {rank:2d}. {iid:6d} {s:8.4f}  {catalog.title(iid)}")
    print(f"{len(lists)} lists written to {out / 'recommendations.txt'}")
    return 0


def format_explanation(user_id, item_id, histogram: dict, cfg: ExplainConfig, k_found: int) -> str:
    e = explainability_from_histogram(histogram, cfg.p_tau)
    e_max = max_explainability(cfg)
    lines = [f"user {user_id}, item {item_id}: {k_found} neighbours considered"]
    if not histogram:
        lines.append("no explanation available (no neighbour rated this item)")
    else:
        for r, c in sorted(histogram.items(), reverse=True):
            mark = "" if r >= cfg.p_tau else "  (below P_tau, not counted)"
            lines.append(f"  {r}*: {c} neighbour{'s' if c != 1 else ''}{mark}")
        if e == 0:
            lines.append("no explanation available (no positive neighbour ratings)")
    lines.append(f"E = {e:g}")
    lines.append(f"E normalised = {e / e_max:.4f} (E_max = {e_max:g})")
    return "\n".join(lines)


def cmd_explain(args):
    _apply_config(args)
    matrix, catalog = _need_dataset(args)
    data = _train_split(args, matrix)
    ecfg = ExplainConfig(args.k, args.p_tau).check()
    u, i = matrix.user_index(args.user), matrix.item_index(args.item)
    graph = build_graph(data, ecfg.k, min_overlap=args.min_overlap)
    hist = neighbor_histogram(data, graph, u, i)
    print(format_explanation(args.user, args.item, hist, ecfg, len(graph.of(u))))
    if args.model:
        model = _load_model(args.model, matrix)
        print(f"predicted score = {model.predict(u, i):.4f}")
    return 0


def _spec_from_args(args, extra: dict) -> ExperimentSpec:
    if not args.dataset:
        raise UsageError("--dataset is required")
    cfg = _train_config(args)
    train_kw = {k: getattr(cfg, k) for k in ("factors", "lr", "beta", "epochs", "init_scale")}
    data = {
        "dataset": args.dataset, "format": args.format, "folds": args.folds, "seed": args.seed,
        "n": args.n, "k": args.k, "p_tau": args.p_tau, "theta": args.theta, "novelty": args.novelty,
        "train_novelty": args.train_novelty, "min_overlap": args.min_overlap, "mmr_lambda": args.mmr_lambda,
        "mmr_pool": args.mmr_pool, "output_dir": str(args.output_dir or default_output_dir()),
        "workers": args.workers, "cache_dir": args.cache_dir,
    }
    if args.command == "evaluate":
        data["cells"] = [asdict(c) for c in table4_grid(lam=args.lam, delta=args.delta, **train_kw)]
    else:
        data["cells"] = [asdict(Cell("sweep", dict(train_kw, lam=args.lam, delta=args.delta, norm=args.norm),
                                     _reranker(args)))]
        data["baseline"] = None
    # file values win over flags
    if "grid" in extra or "cells" in extra:
        data.pop("cells")
    data.update(extra)
    if not Path(data["dataset"]).is_dir():
        raise UsageError(f"dataset directory {data['dataset']!r} does not exist")
    return ExperimentSpec.from_dict(data)


SPEC_ONLY = set(ExperimentSpec.__dataclass_fields__) | {"grid", "grid_params"}


def cmd_evaluate(args):
    extra = _apply_config(args, allowed=SPEC_ONLY)
    spec = _spec_from_args(args, extra)
    report = run_experiment(spec)
    print(compare_table(report))
    print(f"report written to {spec.output_dir}")
    return 0


def _parse_values(text: str, both: bool):
    out = []
    for tok in str(text).split(","):
        tok = tok.strip()
        if not tok:
            continue
        try:
            if both:
                lam, delta = tok.split(":")
                out.append((float(lam), float(delta)))
            else:
                out.append(float(tok))
        except ValueError:
            raise UsageError(f"bad sweep value {tok!r}") from None
    return out


def cmd_sweep(args):
    extra = _apply_config(args, allowed=SPEC_ONLY | {"param", "values"})
    param = extra.pop("param", args.param)
    values = extra.pop("values", args.values)
    if isinstance(values, list):
        values = [tuple(v) if param == "both" else float(v) for v in values]
    else:
        values = _parse_values(values, param == "both")
    spec = _spec_from_args(args, extra)
    rows = sensitivity_sweep(spec, param, values)
    keys = ["lam", "delta"] if param == "both" else [param]
    print("  ".join(f"{k:>7}" for k in keys + list(METRICS)))
    for r in rows:
        print("  ".join([f"{r[k]:7g}" for k in keys] + [f"{r[m] * 100:7.2f}" for m in METRICS]))
    if param == "both":
        best = select_tradeoff(rows)
        print(f"trade-off choice: lam={best['lam']:g} delta={best['delta']:g}")
    print(f"sweep written to {spec.output_dir}")
    return 0


def cmd_compare(args):
    merged = None
    for path in args.reports:
        with open(path) as fh:
            rep = EvalReport.from_dict(json.load(fh))
        if merged is None:
            merged = rep
            continue
        for c in rep.cells:
            if c in merged.cells:
                raise UsageError(f"algorithm {c!r} appears in more than one report")
            if c in rep.failed:
                merged.fail(c, rep.failed[c])
            for f, v in rep.values.get(c, {}).items():
                merged.add(c, f, v)
    print(compare_table(merged))
    if args.p_values:
        for c, ps in merged.p_values().items():
            print(f"{c:<12} " + "  ".join(f"{m}={p:.3g}" for m, p in ps.items()))
    return 0


COMMANDS = {
    "ingest": cmd_ingest, "train": cmd_train, "recommend": cmd_recommend, "explain": cmd_explain,
    "evaluate": cmd_evaluate, "sweep": cmd_sweep, "compare": cmd_compare,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.error(str(exc))
    except (NemfError, KeyError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"nemf {args.command}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
