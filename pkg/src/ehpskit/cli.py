"""Command-line front end.

Exit codes: 0 success, 2 usage error, 3 invalid input, 4 runtime failure.
Seeds come from ``--seed``, then the ``EHPS_SEED`` environment variable, then 0.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from fractions import Fraction

import numpy as np

from . import __version__
from .adapter import (
    AdapterMLP,
    AdapterTrainConfig,
    eval_adapter,
    load_checkpoint,
    sample_betas,
    sample_poses,
    save_checkpoint,
    train_adapter,
)
from .benchmark import (
    LeaderboardEntry,
    get_basket,
    leaderboard_from_dict,
    leaderboard_to_dict,
    nm_consistency_check,
    rank_entries,
    read_table,
    render_report,
    select_topk,
)
from .body_model import MeshResult, forward_batch, gen_gendered_variant, gen_toy_model, load_model, save_model
from .data_store import gen_synthetic_records, load_any, perturb_records, save_records, write_dataset
from .errors import EhpsError, InvalidArgument, TrainingFailure
from .hand_analysis import dataset_hand_stats, rank_by_median, stats_to_csv, stats_to_json
from .metrics import DEFAULT_SPECS, MetricReport, MetricSpec, evaluate_pairs
from .sampler import SampleStrategy, build_schedule

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("EHPS_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"EHPS_SEED must be an integer, got {env!r}") from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _write_text(path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _write_json(path, doc) -> None:
    _write_text(path, json.dumps(doc, indent=2, allow_nan=False) + "\n")


def _read_json(path):
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidArgument(f"{path}: invalid JSON: {exc}") from None


def _emit(text: str, out) -> None:
    if out:
        _write_text(out, text)
    else:
        sys.stdout.write(text)


# -- subcommands -------------------------------------------------------------

def cmd_gen_model(args) -> int:
    seed = _seed(args)
    if args.variant_of:
        model = gen_gendered_variant(load_model(args.variant_of), seed, args.strength)
    else:
        model = gen_toy_model(seed, args.vertices, args.joints, layout=args.layout)
    save_model(model, args.out)
    print(f"wrote {args.out}: {model.num_vertices} vertices, {model.num_joints} joints")
    return EXIT_OK


def cmd_gen_data(args) -> int:
    seed = _seed(args)
    if args.perturb:
        records = perturb_records(load_any(args.perturb), seed, args.sigma)
    else:
        records = gen_synthetic_records(seed, args.n, args.dataset_id, args.hand_complexity)
    if args.out.endswith(".json"):
        write_dataset(records, args.out, args.dataset_id)
    else:
        save_records(records, args.out)
    print(f"wrote {args.out}: {len(records)} records")
    return EXIT_OK


def _meshes(model, records):
    if not records:
        return []
    theta = np.stack([r.state.theta for r in records])
    beta = np.stack([r.state.beta for r in records])
    psi = np.stack([r.state.psi for r in records])
    trans = np.stack([r.state.translation for r in records])
    verts, joints = forward_batch(model, theta, beta, psi, trans)
    return [MeshResult(v, j) for v, j in zip(verts, joints)]


def cmd_forward(args) -> int:
    model = load_model(args.model)
    records = load_any(args.data, model.num_joints)
    meshes = _meshes(model, records)
    doc = {
        "meshes": [
            {"id": r.id, "vertices": m.vertices.tolist(), "joints": m.joints.tolist()}
            for r, m in zip(records, meshes)
        ]
    }
    _write_json(args.out, doc)
    print(f"wrote {args.out}: {len(meshes)} meshes")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model = load_model(args.model)
    preds = {r.id: r for r in load_any(args.pred, model.num_joints)}
    gts = load_any(args.gt, model.num_joints)
    missing = [r.id for r in gts if r.id not in preds]
    if missing:
        raise InvalidArgument(f"{len(missing)} ground-truth record(s) have no prediction, e.g. {missing[0]!r}")
    specs = [MetricSpec.parse(s) for s in args.metric] if args.metric else list(DEFAULT_SPECS)
    pred_meshes = _meshes(model, [preds[r.id] for r in gts])
    gt_meshes = _meshes(model, gts)
    reports = evaluate_pairs(pred_meshes, gt_meshes, model, specs, jobs=args.jobs)
    doc = {
        "subject": args.subject,
        "benchmark": args.benchmark,
        "trained_on": sorted(set(args.trained_on or [])),
        "instance_ids": [r.id for r in gts],
        "reports": [rep.to_dict() for rep in reports],
    }
    _write_json(args.out, doc)
    for rep in reports:
        print(f"{rep.spec.name}: {rep.mean_mm:.1f} mm")
    return EXIT_OK


def _entries_from_reports(paths, basket) -> list[LeaderboardEntry]:
    values: dict[str, dict[str, float]] = {}
    trained: dict[str, set[str]] = {}
    wanted = {e.benchmark_id: e.spec for e in basket.entries}
    for path in paths:
        doc = _read_json(path)
        try:
            subject, bench = doc["subject"], doc["benchmark"]
            reports = [MetricReport.from_dict(r) for r in doc["reports"]]
        except (KeyError, TypeError) as exc:
            raise InvalidArgument(f"{path}: not a metric report file ({exc})") from None
        trained.setdefault(subject, set()).update(doc.get("trained_on", []))
        if bench not in wanted:
            continue
        match = [r for r in reports if r.spec == wanted[bench]]
        if not match:
            raise InvalidArgument(f"{path}: no {wanted[bench].name} report for benchmark {bench}")
        if bench in values.setdefault(subject, {}):
            raise InvalidArgument(f"{path}: second report for {subject} on {bench}")
        values[subject][bench] = match[0].mean_mm
    if not values:
        raise InvalidArgument(f"no report matches a benchmark of basket {basket.name!r}")
    return [LeaderboardEntry(s, values[s], frozenset(trained[s])) for s in sorted(values)]


def _apply_trained_on(entries, pairs) -> None:
    extra: dict[str, set[str]] = {}
    for pair in pairs or []:
        subject, _, datasets = pair.partition("=")
        if not datasets:
            raise UsageError(f"--trained-on expects SUBJECT=DS1,DS2, got {pair!r}")
        extra.setdefault(subject, set()).update(d for d in datasets.split(",") if d)
    for e in entries:
        if e.subject_id in extra:
            e.trained_on = frozenset(e.trained_on | extra[e.subject_id])


def _load_entries(args, basket):
    if args.table:
        with open(args.table, encoding="utf-8") as fh:
            entries = read_table(fh.read())
    else:
        entries = _entries_from_reports(args.reports, basket)
    _apply_trained_on(entries, args.trained_on)
    return entries


def cmd_benchmark(args) -> int:
    basket = get_basket(args.basket)
    board = rank_entries(_load_entries(args, basket), basket)
    if args.out:
        _write_json(args.out, leaderboard_to_dict(board, basket))
    sys.stdout.write(render_report(board, basket, args.format))
    return EXIT_OK


def _board(path):
    board, basket = leaderboard_from_dict(_read_json(path))
    return rank_entries(board, basket), basket


def cmd_rank(args) -> int:
    if args.leaderboard:
        board, basket = _board(args.leaderboard)
    else:
        basket = get_basket(args.basket)
        board = rank_entries(_load_entries(args, basket), basket)
    for e in board:
        print(f"{e.rank}\t{e.subject_id}\t{e.mpe_mm:.1f}")
    return EXIT_OK


def cmd_select_topk(args) -> int:
    board, _ = _board(args.leaderboard)
    if args.bottom:
        worst = sorted(board, key=lambda e: -e.rank)
        chosen = [e.subject_id for e in worst[:args.k]] if 0 <= args.k <= len(worst) else select_topk(board, args.k)
    else:
        chosen = select_topk(board, args.k)
    _emit("".join(f"{s}\n" for s in chosen), args.out)
    return EXIT_OK


def cmd_schedule(args) -> int:
    sizes = args.sizes
    ids = args.ids.split(",") if args.ids else [f"d{i}" for i in range(len(sizes))]
    if len(ids) != len(sizes):
        raise UsageError(f"--ids names {len(ids)} datasets but --sizes gives {len(sizes)}")
    strategy = SampleStrategy(args.strategy, Fraction(args.ratio))
    sched = build_schedule(list(zip(ids, sizes)), strategy, args.total, _seed(args), jobs=args.jobs)
    if args.out:
        _write_text(args.out, sched.to_json() + "\n")
    print("lengths: " + ",".join(str(sched.dataset_lengths[d]) for d in ids))
    return EXIT_OK


def _train_config(args, pose_free=False) -> AdapterTrainConfig:
    seed = _seed(args)
    return AdapterTrainConfig(
        steps=args.steps,
        step_size=args.step_size,
        batch_size=args.batch_size,
        pose_sampler_seed=seed,
        beta_sampler_seed=seed + 1,
        init_seed=seed + 2,
        hidden=args.hidden,
        pose_free=pose_free,
    )


def _heldout(model, n: int, seed: int):
    return sample_poses(model, n, seed + 1000), sample_betas(n, seed + 1001)


def cmd_train_adapter(args) -> int:
    model_g, model_n = load_model(args.gendered), load_model(args.neutral)
    config = _train_config(args, args.pose_free)
    adapter, trace = train_adapter(model_g, model_n, config)
    poses, betas = _heldout(model_n, args.eval_size, _seed(args))
    heldout = eval_adapter(model_g, model_n, adapter, poses, betas)
    save_checkpoint(args.out, adapter, config, heldout)
    if args.trace:
        _write_json(args.trace, {"loss_m": trace})
    print(f"train loss: {trace[0] * 1000:.3f} -> {trace[-1] * 1000:.3f} mm")
    print(f"held-out error: {heldout:.3f} mm")
    return EXIT_OK


def cmd_eval_adapter(args) -> int:
    model_g, model_n = load_model(args.gendered), load_model(args.neutral)
    if args.checkpoint:
        adapter = load_checkpoint(args.checkpoint)[0]
    else:
        adapter = AdapterMLP.identity()
    poses, betas = _heldout(model_n, args.eval_size, _seed(args))
    print(f"{eval_adapter(model_g, model_n, adapter, poses, betas):.3f}")
    return EXIT_OK


def cmd_hand_stats(args) -> int:
    model = load_model(args.model)
    stats = []
    for spec in args.data:
        name, sep, path = spec.partition("=")
        if not sep:
            name, path = os.path.splitext(os.path.basename(spec))[0], spec
        records = load_any(path, model.num_joints)
        stats.append(dataset_hand_stats(records, model, name, args.frame, args.jobs))
    ranked = rank_by_median(stats)
    if args.csv:
        _write_text(args.csv, stats_to_csv(ranked))
    if args.json:
        _write_text(args.json, stats_to_json(ranked))
    for i, s in enumerate(ranked, start=1):
        print(f"{i}\t{s.dataset_id}\tn={s.n}\tmedian={s.median_mm:.1f}\tq1={s.q1_mm:.1f}\tq3={s.q3_mm:.1f}")
    return EXIT_OK


def cmd_nm_check(args) -> int:
    res = nm_consistency_check(args.mve, args.nmve, args.mje, args.nmje, args.tolerance)
    print(f"F1 (vertices) = {res.f1_vertices:.5f}")
    print(f"F1 (joints)   = {res.f1_joints:.5f}")
    print(f"gap = {res.gap:.5f} ({'consistent' if res.passed else 'INCONSISTENT'}, tolerance {args.tolerance})")
    return EXIT_OK if res.passed else EXIT_INVALID


def cmd_report(args) -> int:
    board, basket = _board(args.leaderboard)
    _emit(render_report(board, basket, args.format), args.out)
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ehpskit", description="Whole-body mesh recovery evaluation toolkit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, func, help_text):
        sp = sub.add_parser(name, help=help_text, description=help_text)
        sp.set_defaults(func=func)
        return sp

    def seed_arg(sp):
        sp.add_argument("--seed", type=int, default=None, help="random seed (default: $EHPS_SEED or 0)")

    def source_args(sp):
        src = sp.add_mutually_exclusive_group(required=True)
        src.add_argument("--reports", nargs="+", metavar="JSON", help="metric report files from `evaluate`")
        src.add_argument("--table", metavar="CSV", help="per-benchmark value table")
        sp.add_argument("--basket", default="whole_body", help="built-in basket name or basket JSON file")
        sp.add_argument("--trained-on", action="append", metavar="SUBJECT=DS,...",
                        help="datasets a subject trained on (repeatable)")

    sp = add("gen-model", cmd_gen_model, "Generate a synthetic body model.")
    seed_arg(sp)
    sp.add_argument("--vertices", type=int, default=200)
    sp.add_argument("--joints", type=int, default=55)
    sp.add_argument("--layout", choices=("canonical", "minimal"), default="canonical")
    sp.add_argument("--variant-of", metavar="MODEL", help="derive a gendered variant of this model instead")
    sp.add_argument("--strength", type=float, default=0.3, help="variant deviation strength")
    sp.add_argument("--out", required=True)

    sp = add("gen-data", cmd_gen_data, "Generate synthetic records, or perturbed copies of existing ones.")
    seed_arg(sp)
    sp.add_argument("--n", type=int, default=100)
    sp.add_argument("--dataset-id", default="synthetic")
    sp.add_argument("--hand-complexity", choices=("low", "mixed", "high"), default="mixed")
    sp.add_argument("--perturb", metavar="RECORDS", help="perturb these records (predictions stand-in)")
    sp.add_argument("--sigma", type=float, default=0.05)
    sp.add_argument("--out", required=True, help="manifest (.json) or records (.jsonl)")

    sp = add("forward", cmd_forward, "Pose records through a model and dump meshes.")
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)

    sp = add("evaluate", cmd_evaluate, "Compare predicted and ground-truth records.")
    sp.add_argument("--model", required=True)
    sp.add_argument("--pred", required=True)
    sp.add_argument("--gt", required=True)
    sp.add_argument("--metric", action="append", metavar="KIND:part[:alignment]")
    sp.add_argument("--subject", default="subject")
    sp.add_argument("--benchmark", default="benchmark")
    sp.add_argument("--trained-on", action="append", metavar="DATASET")
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--out", required=True)

    sp = add("benchmark", cmd_benchmark, "Build a leaderboard and print its report.")
    source_args(sp)
    sp.add_argument("--format", choices=("markdown", "csv"), default="markdown")
    sp.add_argument("--out", help="leaderboard JSON")

    sp = add("rank", cmd_rank, "Print subjects by mean primary error.")
    grp = sp.add_mutually_exclusive_group(required=True)
    grp.add_argument("--leaderboard")
    grp.add_argument("--reports", nargs="+", metavar="JSON")
    grp.add_argument("--table", metavar="CSV")
    sp.add_argument("--basket", default="whole_body")
    sp.add_argument("--trained-on", action="append", metavar="SUBJECT=DS,...")

    sp = add("select-topk", cmd_select_topk, "List the k best (or worst) ranked subjects.")
    sp.add_argument("--leaderboard", required=True)
    sp.add_argument("-k", type=int, required=True)
    sp.add_argument("--bottom", action="store_true")
    sp.add_argument("--out")

    sp = add("schedule", cmd_schedule, "Plan per-dataset lengths and index schedules.")
    seed_arg(sp)
    sp.add_argument("--strategy", choices=("balanced", "weighted", "concatenated"), default="balanced")
    sp.add_argument("--total", type=int)
    sp.add_argument("--sizes", type=_int_list, required=True, help="source sizes, best-ranked first")
    sp.add_argument("--ids", help="dataset ids matching --sizes")
    sp.add_argument("--ratio", default="4", help="weighted first:last ratio")
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--out")

    for name, func, text in (("train-adapter", cmd_train_adapter, "Train a gendered-to-neutral shape adapter."),
                             ("eval-adapter", cmd_eval_adapter, "Held-out error of an adapter checkpoint (mm).")):
        sp = add(name, func, text)
        seed_arg(sp)
        sp.add_argument("--gendered", required=True)
        sp.add_argument("--neutral", required=True)
        sp.add_argument("--eval-size", type=int, default=200)
        if name == "train-adapter":
            sp.add_argument("--steps", type=int, default=2000)
            sp.add_argument("--step-size", type=float, default=1.0)
            sp.add_argument("--batch-size", type=int, default=256)
            sp.add_argument("--hidden", type=int, default=64)
            sp.add_argument("--pose-free", action="store_true")
            sp.add_argument("--trace", help="write the loss trace JSON here")
            sp.add_argument("--out", required=True)
        else:
            sp.add_argument("--checkpoint", help="omit to evaluate the identity adapter")

    sp = add("hand-stats", cmd_hand_stats, "Hand articulation statistics per dataset.")
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", nargs="+", required=True, metavar="[NAME=]PATH")
    sp.add_argument("--frame", choices=("canonical", "raw"), default="canonical")
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--csv")
    sp.add_argument("--json")

    sp = add("nm-check", cmd_nm_check, "Check that NMVE and NMJE imply the same detection F1.")
    for flag in ("--mve", "--nmve", "--mje", "--nmje"):
        sp.add_argument(flag, type=float, required=True)
    sp.add_argument("--tolerance", type=float, default=0.005)

    sp = add("report", cmd_report, "Render a saved leaderboard.")
    sp.add_argument("--leaderboard", required=True)
    sp.add_argument("--format", choices=("markdown", "csv"), default="markdown")
    sp.add_argument("--out")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    for flag in ("jobs",):
        if getattr(args, flag, 1) < 1:
            print(f"ehpskit: error: --{flag} must be at least 1", file=sys.stderr)
            return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"ehpskit: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingFailure as exc:
        print(f"ehpskit: training failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (EhpsError, FileNotFoundError) as exc:
        print(f"ehpskit: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"ehpskit: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
