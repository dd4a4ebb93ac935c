"""Command-line entry point wiring the pipelines end to end.

Exit codes: 0 success, 1 usage error, 2 data/validation error. Analysis
commands are RNG-free; randomness is confined to ``synth``.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import concepts, evaluation, features, lrmodel, neighbors, pipeline, synthgen, uncertainty
from .ranking import read_ranking_csv, write_ranking_csv
from .tensorio import BundleError, TensorFormatError, load_bundle


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits 2; usage errors are 1
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="cafd", description=__doc__)
    parser.add_argument("--threads", type=int, default=None, help="cap worker threads (default: logical cores)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a seeded synthetic bundle")
    p.add_argument("--config", type=Path, help="JSON config; defaults used when omitted")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", type=Path, required=True)

    def bundle_arg(p):
        p.add_argument("--bundle", type=Path, required=True, help="bundle manifest JSON")

    def workdir_arg(p):
        p.add_argument("--workdir", type=Path, required=True, help="directory holding stage artifacts")

    p = sub.add_parser("align", help="fit the latent-to-shared-space aligner")
    bundle_arg(p)
    workdir_arg(p)
    p.add_argument("--aligner-lambda", type=float, default=concepts.DEFAULT_RIDGE)

    p = sub.add_parser("rcs", help="extract training concepts and build the representative set")
    bundle_arg(p)
    workdir_arg(p)
    p.add_argument("--concepts-m", type=int, default=concepts.DEFAULT_M)

    p = sub.add_parser("cfr", help="fill per-concept failure ratios")
    bundle_arg(p)
    workdir_arg(p)

    p = sub.add_parser("features", help="assemble and standardize both feature splits")
    bundle_arg(p)
    workdir_arg(p)
    p.add_argument("--knn-k", type=int, default=neighbors.DEFAULT_K)
    p.add_argument("--ned-tau", type=float, default=neighbors.DEFAULT_TAU)

    p = sub.add_parser("train", help="train the fault detector")
    bundle_arg(p)
    workdir_arg(p)
    p.add_argument("--l2", type=float, default=lrmodel.DEFAULT_L2)
    p.add_argument("--tol", type=float, default=lrmodel.DEFAULT_TOL)
    p.add_argument("--max-iters", type=int, default=lrmodel.DEFAULT_MAX_ITERS)
    p.add_argument("--class-weight", choices=["balanced", "none"], default="balanced")

    p = sub.add_parser("rank", help="rank the test split with the trained detector")
    workdir_arg(p)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("baseline", help="rank the test split with a baseline method")
    bundle_arg(p)
    p.add_argument("--method", choices=["deepgini", "vanilla", "margin", "datis"], required=True)
    p.add_argument("--knn-k", type=int, default=neighbors.DEFAULT_K)
    p.add_argument("--ned-tau", type=float, default=neighbors.DEFAULT_TAU)
    p.add_argument("--datis-epsilon", type=float, default=neighbors.DEFAULT_EPSILON)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("fdr", help="fault detection rate of a ranking at each budget")
    p.add_argument("--ranking", type=Path, required=True)
    p.add_argument("--clusters", type=Path, required=True)
    p.add_argument("--n-test", type=int, required=True)
    p.add_argument("--budgets", type=str, default=",".join(str(b) for b in evaluation.DEFAULT_BUDGETS))
    p.add_argument("--out", type=Path)

    p = sub.add_parser("compare", help="compare several rankings by detection rate")
    p.add_argument("--ranking", action="append", required=True, metavar="NAME=CSV")
    p.add_argument("--clusters", type=Path, required=True)
    p.add_argument("--n-test", type=int, required=True)
    p.add_argument("--budgets", type=str, default=",".join(str(b) for b in evaluation.DEFAULT_BUDGETS))
    p.add_argument("--primary", type=str, default=None)
    p.add_argument("--out-prefix", type=Path)

    p = sub.add_parser("importance", help="coefficient, odds-ratio, and elimination-order report")
    bundle_arg(p)
    workdir_arg(p)
    p.add_argument("--rfe-step", type=float, default=0.1)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("bench", help="time full test-set scoring and ranking")
    bundle_arg(p)
    workdir_arg(p)
    p.add_argument("--out", type=Path, help="also write the timed ranking CSV")

    p = sub.add_parser("dbscan", help="cluster failing-input features (desk-scale substitute)")
    p.add_argument("--features", type=Path, required=True, help="tensor file of failing-input features")
    p.add_argument("--input-ids", type=Path, help="tensor file of failing input ids (int64)")
    p.add_argument("--dbscan-eps", type=float, required=True)
    p.add_argument("--dbscan-minpts", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)

    return parser


def _parse_budgets(text: str) -> list[float]:
    try:
        budgets = [float(x) for x in text.split(",") if x.strip()]
    except ValueError as err:
        raise UsageError(f"bad --budgets {text!r}: {err}") from None
    if not budgets:
        raise UsageError("--budgets is empty")
    return budgets


def _load_pipeline(workdir: Path) -> pipeline.TrainedPipeline:
    aligner = _read_aligner(workdir)
    with open(workdir / "rcs.json", "r", encoding="utf-8") as fh:
        rcs_meta = json.load(fh)
    table = concepts.read_table(workdir / "rcs_emb.bin", workdir / "rcs.csv", m=rcs_meta["m"])
    model = lrmodel.load_model(workdir / "model")
    train_fm = features.load_features(workdir / "features_train")
    with open(workdir / "features_meta.json", "r", encoding="utf-8") as fh:
        fmeta = json.load(fh)
    return pipeline.TrainedPipeline(
        aligner=aligner,
        table=table,
        model=model,
        mean=train_fm.mean,
        std=train_fm.std,
        knn_k=int(fmeta["knn_k"]),
        ned_tau=float(fmeta["ned_tau"]),
    )


def _write_aligner(workdir: Path, aligner: concepts.Aligner) -> None:
    from .tensorio import write_tensor

    write_tensor(workdir / "aligner.bin", aligner.weights.astype(np.float32))
    with open(workdir / "aligner.json", "w", encoding="utf-8") as fh:
        json.dump({"ridge_lambda": aligner.ridge_lambda, "r2": aligner.r2}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_aligner(workdir: Path) -> concepts.Aligner:
    from .tensorio import read_tensor

    weights = read_tensor(workdir / "aligner.bin").astype(np.float64)
    with open(workdir / "aligner.json", "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    return concepts.Aligner(weights=weights, ridge_lambda=float(meta["ridge_lambda"]), r2=float(meta["r2"]))


def _cmd_synth(args) -> None:
    config = synthgen.SynthConfig.from_json(args.config) if args.config else synthgen.SynthConfig()
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    manifest, clusters = synthgen.write_synth(config, args.out)
    print(f"wrote {manifest} and {clusters}")


def _cmd_align(args) -> None:
    bundle = load_bundle(args.bundle)
    if bundle.clip_img_train is None:
        raise ValueError("bundle lacks clip_img_train; cannot fit the aligner")
    args.workdir.mkdir(parents=True, exist_ok=True)
    aligner = concepts.fit_aligner(bundle.latent_train, bundle.clip_img_train, args.aligner_lambda)
    _write_aligner(args.workdir, aligner)
    print(f"aligner fit: r2={aligner.r2:.6f}")


def _cmd_rcs(args) -> None:
    from .tensorio import write_tensor

    bundle = load_bundle(args.bundle)
    aligner = _read_aligner(args.workdir)
    assign_ids, _ = concepts.extract_concepts_batch(
        bundle.latent_train, aligner, bundle.concept_text, args.concepts_m
    )
    table = concepts.build_rcs(assign_ids, bundle.concept_text, bundle.concept_names, args.concepts_m)
    write_tensor(args.workdir / "train_assign.bin", assign_ids)
    concepts.write_table(table, args.workdir / "rcs_emb.bin", args.workdir / "rcs.csv")
    with open(args.workdir / "rcs.json", "w", encoding="utf-8") as fh:
        json.dump({"m": args.concepts_m, "size": len(table.concept_ids)}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"representative concept set: {len(table.concept_ids)} concepts")


def _cmd_cfr(args) -> None:
    from .tensorio import read_tensor

    bundle = load_bundle(args.bundle)
    with open(args.workdir / "rcs.json", "r", encoding="utf-8") as fh:
        rcs_meta = json.load(fh)
    table = concepts.read_table(args.workdir / "rcs_emb.bin", args.workdir / "rcs.csv", m=rcs_meta["m"])
    assign_ids = read_tensor(args.workdir / "train_assign.bin")
    table = concepts.compute_cfr(table, assign_ids, pipeline.train_failures(bundle))
    concepts.write_table(table, args.workdir / "rcs_emb.bin", args.workdir / "rcs.csv")
    print(f"failure ratios filled for {len(table.concept_ids)} concepts")


def _cmd_features(args) -> None:
    from .tensorio import read_tensor

    bundle = load_bundle(args.bundle)
    aligner = _read_aligner(args.workdir)
    with open(args.workdir / "rcs.json", "r", encoding="utf-8") as fh:
        rcs_meta = json.load(fh)
    table = concepts.read_table(args.workdir / "rcs_emb.bin", args.workdir / "rcs.csv", m=rcs_meta["m"])
    assign_ids = read_tensor(args.workdir / "train_assign.bin")

    supports_train = neighbors.ned_support_batch(
        bundle.latent_train, bundle.latent_train, bundle.labels_train, bundle.num_classes,
        k=args.knn_k, tau=args.ned_tau, exclude_self=True,
    )
    fm_train = features.standardize_fit(
        features.assemble(bundle, "train", supports_train, concepts.concept_feature(assign_ids, table))
    )
    pipe = pipeline.TrainedPipeline(
        aligner=aligner, table=table, model=None, mean=fm_train.mean, std=fm_train.std,
        knn_k=args.knn_k, ned_tau=args.ned_tau,
    )
    fm_test = pipeline.test_feature_matrix(bundle, pipe)
    features.save_features(fm_train, args.workdir / "features_train")
    features.save_features(fm_test, args.workdir / "features_test")
    with open(args.workdir / "features_meta.json", "w", encoding="utf-8") as fh:
        json.dump({"knn_k": args.knn_k, "ned_tau": args.ned_tau}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"features: train {fm_train.X.shape}, test {fm_test.X.shape}")


def _cmd_train(args) -> None:
    bundle = load_bundle(args.bundle)
    fm = features.load_features(args.workdir / "features_train")
    model = lrmodel.train(
        fm,
        pipeline.train_failures(bundle),
        lambda_l2=args.l2,
        tol=args.tol,
        max_iters=args.max_iters,
        class_weight=args.class_weight,
    )
    lrmodel.save_model(model, args.workdir / "model")
    print(f"trained: converged={model.converged} iters={model.n_iters} grad={model.grad_norm:.3e}")


def _cmd_rank(args) -> None:
    model = lrmodel.load_model(args.workdir / "model")
    fm = features.load_features(args.workdir / "features_test")
    ranked = lrmodel.rank_cafd(model, fm)
    write_ranking_csv(ranked, args.out)
    print(f"wrote {args.out} ({len(ranked)} rows)")


def _cmd_baseline(args) -> None:
    bundle = load_bundle(args.bundle)
    if args.method == "datis":
        ranked = neighbors.rank_by_datis(bundle, k=args.knn_k, tau=args.ned_tau, epsilon=args.datis_epsilon)
    else:
        ranked = uncertainty.rank_by_metric(bundle, args.method)
    write_ranking_csv(ranked, args.out)
    print(f"wrote {args.out} ({len(ranked)} rows)")


def _cmd_fdr(args) -> None:
    ranked = read_ranking_csv(args.ranking)
    clustering = evaluation.read_clusters_csv(args.clusters)
    budgets = _parse_budgets(args.budgets)
    rows = [evaluation.fdr(ranked, clustering, b, args.n_test) for b in budgets]
    lines = ["budget,b,detected,total,fdr"]
    for r in rows:
        lines.append(f"{r.budget_fraction!r},{r.b},{r.detected},{r.total},{r.fdr!r}")
    text = "\n".join(lines) + "\n"
    if args.out:
        args.out.write_text(text, encoding="utf-8")
    print(text, end="")


def _cmd_compare(args) -> None:
    rankings = {}
    for spec in args.ranking:
        if "=" not in spec:
            raise UsageError(f"--ranking expects NAME=CSV, got {spec!r}")
        name, path = spec.split("=", 1)
        rankings[name] = read_ranking_csv(Path(path))
    clustering = evaluation.read_clusters_csv(args.clusters)
    report = evaluation.compare(rankings, clustering, _parse_budgets(args.budgets), args.n_test, args.primary)
    if args.out_prefix:
        Path(f"{args.out_prefix}_fdr.csv").write_text(report.to_csv(), encoding="utf-8")
        Path(f"{args.out_prefix}_pvalues.csv").write_text(report.pvalues_csv(), encoding="utf-8")
        Path(f"{args.out_prefix}_table.txt").write_text(report.to_text(), encoding="utf-8")
    print(report.to_text(), end="")


def _cmd_importance(args) -> None:
    bundle = load_bundle(args.bundle)
    model = lrmodel.load_model(args.workdir / "model")
    fm = features.load_features(args.workdir / "features_train")
    report = lrmodel.importance(model, fm, pipeline.train_failures(bundle), rfe_step=args.rfe_step)
    group_of = {}
    for name, (start, stop) in fm.column_map.items():
        for j in range(start, stop):
            group_of[j] = name
    rfe_rank = np.empty_like(report.rfe_order)
    rfe_rank[report.rfe_order] = np.arange(len(report.rfe_order))
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["feature_index", "group", "coef_magnitude", "odds_ratio", "rfe_rank"])
        for j in range(len(report.coef_magnitude)):
            writer.writerow(
                [j, group_of[j], repr(float(report.coef_magnitude[j])), repr(float(report.odds_ratio[j])), int(rfe_rank[j])]
            )
    print(f"wrote {args.out}")


def _cmd_bench(args) -> None:
    bundle = load_bundle(args.bundle)
    pipe = _load_pipeline(args.workdir)
    start = time.perf_counter()
    _, ranked = pipeline.score_test(bundle, pipe)
    elapsed = time.perf_counter() - start
    if args.out:
        write_ranking_csv(ranked, args.out)
    print("method  seconds")
    print(f"cafd    {elapsed:.2f}")


def _cmd_dbscan(args) -> None:
    from .tensorio import read_tensor

    feats = read_tensor(args.features).astype(np.float64)
    ids = read_tensor(args.input_ids) if args.input_ids else None
    clustering = evaluation.dbscan_substitute(feats, args.dbscan_eps, args.dbscan_minpts, input_ids=ids)
    evaluation.write_clusters_csv(clustering, args.out)
    print(f"wrote {args.out} ({clustering.n_faults} clusters)")


_COMMANDS = {
    "synth": _cmd_synth,
    "align": _cmd_align,
    "rcs": _cmd_rcs,
    "cfr": _cmd_cfr,
    "features": _cmd_features,
    "train": _cmd_train,
    "rank": _cmd_rank,
    "baseline": _cmd_baseline,
    "fdr": _cmd_fdr,
    "compare": _cmd_compare,
    "importance": _cmd_importance,
    "bench": _cmd_bench,
    "dbscan": _cmd_dbscan,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as err:
        print(f"cafd: usage error: {err}", file=sys.stderr)
        return 1
    command = args.command
    try:
        from threadpoolctl import threadpool_limits

        limiter = threadpool_limits(limits=args.threads) if args.threads else None
    except ImportError:
        limiter = None
    try:
        _COMMANDS[command](args)
        return 0
    except UsageError as err:
        print(f"cafd {command}: usage error: {err}", file=sys.stderr)
        return 1
    except (BundleError, TensorFormatError, ValueError, KeyError, OSError, json.JSONDecodeError) as err:
        print(f"cafd {command}: error: {err}", file=sys.stderr)
        return 2
    finally:
        if limiter is not None:
            limiter.unregister()


if __name__ == "__main__":
    sys.exit(main())
