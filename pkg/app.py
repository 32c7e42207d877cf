#!/usr/bin/env python3
# app.py - command-line harness for the route-manipulation experiments
"""
Subcommands:
    gen-env   generate a seeded world and write it as a graph directory
    plan      plan a landmark route on a graph
    attack    select nodes along start->target and rewrite their images
    detect    noise-sensitivity sweep (clean vs modified) or single-graph verdicts
    evaluate  route metrics for one attack, or a seeded batch (--batch N)

Landmarks are given as comma-separated text (--landmarks "a stop sign,a mailbox");
no language model extracts them from an instruction.
"""
import argparse
import json
import logging
import os
import sys

from navattack import config
from navattack.attack import (
    REPORT_FILE,
    modify_all_images,
    modify_graph,
    save_attack,
    select_nodes,
    sharpen_landmarks,
)
from navattack.config import ExperimentConfig, parse_sigmas
from navattack.detector import DetectionConfig, detect_graph, sweep, touched_images
from navattack.embedding import encoder_from_spec
from navattack.errors import GraphFormatError, InputError
from navattack.metrics import METRIC_NAMES, RouteEvalInput, evaluate_route
from navattack.navgraph import LandmarkSeq, load_graph, same_graph
from navattack.planner import (
    PlanConfig,
    diagnose_arrival,
    landmark_probabilities,
    plan_route,
    simulate_traversal,
)
from navattack.scenarios import alignment_configs, imperceptibility_summary, run_table
from navattack.worldgen import WorldParams, landmark_node, load_world, make_world, save_world
from utils.report_helper import atomic_directory, atomic_file, read_json, stamp, write_csv, write_json

logger = logging.getLogger("navattack-cli")

SHARPEN_REPORT = "sharpen_report.json"


def _configure_logging(level: str):
    logging.basicConfig(level=getattr(logging, level.upper(), logging.INFO),
                        format="%(asctime)s %(levelname)s %(message)s")
    logging.getLogger().setLevel(getattr(logging, level.upper(), logging.INFO))


def _parse_landmarks(text: str):
    texts = [t.strip() for t in (text or "").split(",") if t.strip()]
    if not texts:
        raise InputError("landmark list is empty")
    return texts


def _parse_ids(text: str):
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise InputError(f"bad node id list {text!r}") from exc


def _experiment(args, **overrides) -> ExperimentConfig:
    values = {"seed": args.seed}
    for name in ("alpha", "temperature", "max_steps", "workers"):
        value = getattr(args, name, None)
        if value is not None:
            values[name] = value
    values.update(overrides)
    return ExperimentConfig(**values).validate()


def _write_payload(path: str, payload: dict):
    with atomic_file(path) as tmp:
        write_json(tmp, payload)


# ---- Commands ----
def cmd_gen_env(args) -> int:
    cfg = _experiment(args, node_count=args.nodes, landmark_count=args.landmarks,
                      noise_amplitude=args.noise)
    params = WorldParams(noise_amplitude=cfg.noise_amplitude, encoder_seed=args.encoder_seed)
    world = make_world(args.seed, cfg.node_count, cfg.landmark_count, params)
    placed = {label: landmark_node(world, label) for label in world.landmark_labels}
    records = []
    if args.sharpen:
        enc = world.params.encoder()
        landmarks = LandmarkSeq.from_texts(enc, world, world.landmark_labels)
        boost, _ = alignment_configs(enc, world.graph, cfg)
        sharpened, records = sharpen_landmarks(enc, world.graph, list(placed.values()), landmarks, boost)
        world = world.with_graph(sharpened)
    with atomic_directory(args.out) as tmp:
        save_world(world, tmp)
        if args.sharpen:
            write_json(os.path.join(tmp, SHARPEN_REPORT), stamp({
                "landmarks": list(placed),
                "nodes": list(placed.values()),
                "modifications": [r.to_json() for r in records],
            }))
    print(f"nodes={len(world.graph)} edges={len(world.graph.edges)} seed={world.seed}")
    for label, nid in placed.items():
        print(f"  {label!r} at node {nid}")
    if records:
        print(f"sharpened {len(records)} landmark images")
    logger.info("World written to %s", args.out)
    return 0


def cmd_plan(args) -> int:
    world = load_world(args.graph)
    enc = world.params.encoder()
    landmarks = LandmarkSeq.from_texts(enc, world, _parse_landmarks(args.landmarks))
    cfg = _experiment(args)
    plan = plan_route(enc, world.graph, landmarks, PlanConfig(args.start, cfg.alpha, cfg.temperature))
    payload = stamp({"plan": plan.to_json(), "start": args.start, "alpha": cfg.alpha,
                     "temperature": cfg.temperature})
    if args.out:
        _write_payload(args.out, payload)
    else:
        print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def cmd_attack(args) -> int:
    world = load_world(args.graph)
    enc = world.params.encoder()
    g = world.graph
    cfg = _experiment(args)
    boost, suppress = alignment_configs(enc, g, cfg)

    if args.all_images:
        attacked, records = modify_all_images(enc, world, g, boost, cfg.seed, workers=cfg.workers)
        payload = stamp({
            "mode": "all_images",
            "modifications": [r.to_json() for r in records],
            "touched_images": sorted([[r.node_id, r.slot] for r in records]),
            "output_dir": os.path.abspath(args.out),
        })
    else:
        if args.start is None or args.target is None or not args.landmarks:
            raise InputError("attack needs --start, --target and --landmarks (or --all-images)")
        landmarks = LandmarkSeq.from_texts(enc, world, _parse_landmarks(args.landmarks))
        plan = select_nodes(enc, g, args.start, args.target, landmarks)
        attacked, report = modify_graph(enc, g, plan, landmarks, boost, suppress,
                                        margin=cfg.suppress_margin, workers=cfg.workers)
        report.output_dir = os.path.abspath(args.out)
        payload = stamp(dict(report.to_json(), mode="route"))

    with atomic_directory(args.out) as tmp:
        save_attack(tmp, attacked, world.with_graph(attacked), payload)
    print(f"modified {len(payload['touched_images'])} images -> {args.out}")
    return 0


def cmd_detect(args) -> int:
    cfg = _experiment(args, trials=args.trials)
    if args.graph:
        if args.sigma is None or args.threshold is None:
            raise InputError("single-graph detection needs --sigma and --threshold")
        g = load_graph(args.graph)
        enc = encoder_from_spec(g.encoder or {}, g.image_shape)
        det_cfg = DetectionConfig(args.sigma, cfg.trials, args.threshold, args.seed, cfg.workers)
        report_path = os.path.join(args.graph, REPORT_FILE)
        truth = touched_images(read_json(report_path)) if os.path.isfile(report_path) else None
        report = detect_graph(enc, g, det_cfg, _parse_ids(args.path) if args.path else None, truth)
        with atomic_directory(args.out) as tmp:
            write_json(os.path.join(tmp, "detection.json"), stamp(report.to_json()))
        flagged = sum(1 for v in report.verdicts if v.verdict == "modified")
        print(f"{flagged}/{len(report.verdicts)} images flagged as modified")
        return 0

    if not (args.clean and args.modified):
        raise InputError("detect needs --clean and --modified, or --graph")
    clean, modified = load_graph(args.clean), load_graph(args.modified)
    identical = same_graph(clean, modified)
    if identical:
        logger.warning("%s and %s hold identical images; the sweep cannot separate them",
                       args.clean, args.modified)
    enc = encoder_from_spec(clean.encoder or {}, clean.image_shape)
    sigmas = parse_sigmas(args.sigmas) if args.sigmas else config.DEFAULT_SIGMAS
    report_path = os.path.join(args.modified, REPORT_FILE)
    keys = touched_images(read_json(report_path)) if os.path.isfile(report_path) else None
    base = DetectionConfig(sigmas[0], cfg.trials, config.REFERENCE_THRESHOLD, args.seed, cfg.workers)
    result = sweep(enc, clean, modified, sigmas, base, keys)

    best = result.best_index
    payload = stamp({
        "operating_point": {"sigma": result.sigmas[best], "threshold": result.thresholds[best]},
        "reference_operating_point": {"sigma": config.REFERENCE_SIGMA, "threshold": config.REFERENCE_THRESHOLD},
        "best_accuracy": result.accuracies[best],
        "best_f1": result.f1_scores[best],
        "population": "touched_images" if keys else "all_images",
        "identical_graphs": identical,
        "sweep": result.to_json(),
    })
    with atomic_directory(args.out) as tmp:
        write_json(os.path.join(tmp, "detection.json"), payload)
        write_csv(os.path.join(tmp, "sweep.csv"), ["sigma", "mean_clean", "mean_modified", "best_accuracy"],
                  result.rows())
    print(f"best balanced accuracy {result.accuracies[best]:.3f} at sigma={result.sigmas[best]:.3g}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _experiment(args)
    if args.batch:
        rows, results = run_table(args.seed, args.batch, cfg,
                                  sizes=(("small", args.small_nodes), ("large", args.large_nodes)))
        everything = [r for rs in results.values() for r in rs]
        payload = stamp({
            "batch": args.batch,
            "seed": args.seed,
            "table": {row[0]: {"small": row[1], "large": row[2]} for row in rows},
            "imperceptibility": imperceptibility_summary(everything),
            "scenarios": {env: [r.to_json() for r in rs] for env, rs in results.items()},
        })
        with atomic_directory(args.out) as tmp:
            write_json(os.path.join(tmp, "evaluation.json"), payload)
            write_csv(os.path.join(tmp, "table1.csv"), ["metric", "small", "large"], rows)
        for row in rows:
            print(f"{row[0]:<28} small={row[1]:.3f} large={row[2]:.3f}")
        return 0

    for flag in ("clean_graph", "attacked_graph", "attack_report", "landmarks", "start"):
        if getattr(args, flag) is None:
            raise InputError(f"evaluate needs --{flag.replace('_', '-')} (or --batch)")
    if not os.path.isfile(args.attack_report):
        raise InputError(f"attack report {args.attack_report} not found")
    attack = read_json(args.attack_report).get("plan")
    if not attack:
        raise InputError(f"{args.attack_report} holds no route attack plan")

    world = load_world(args.clean_graph)
    enc = world.params.encoder()
    attacked = load_world(args.attacked_graph).graph
    landmarks = LandmarkSeq.from_texts(enc, world, _parse_landmarks(args.landmarks))
    plan_cfg = PlanConfig(args.start, cfg.alpha, cfg.temperature)
    clean_plan = plan_route(enc, world.graph, landmarks, plan_cfg)
    attacked_plan = plan_route(enc, attacked, landmarks, plan_cfg)
    inp = RouteEvalInput(
        clean_traversal=simulate_traversal(world.graph, clean_plan),
        attacked_traversal=simulate_traversal(attacked, attacked_plan),
        attacked_assignments=attacked_plan.assignments,
        selected=list(attack["selected"]),
        attack_path=list(attack["path"]),
        target=int(attack["target"]),
    )
    probs = landmark_probabilities(enc, attacked, landmarks, cfg.temperature)
    report = evaluate_route(inp, diagnose_arrival(attacked_plan, probs, inp.target))
    payload = stamp({"evaluation": report.to_json(), "clean_plan": clean_plan.to_json(),
                     "attacked_plan": attacked_plan.to_json()})
    with atomic_directory(args.out) as tmp:
        write_json(os.path.join(tmp, "evaluation.json"), payload)
        write_csv(os.path.join(tmp, "table1.csv"), ["metric", "value"],
                  [[name, float(getattr(report, name))] for name in METRIC_NAMES])
    print(" ".join(f"{name}={float(getattr(report, name)):.3f}" for name in METRIC_NAMES))
    return 0


# ---- Parser ----
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="app.py", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--log-level", default=config.LOG_LEVEL, help="DEBUG, INFO, WARNING or ERROR")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--max-steps", type=int, default=None)

    p = sub.add_parser("gen-env", help="generate a seeded world")
    common(p)
    p.add_argument("--nodes", type=int, default=config.SMALL_NODES)
    p.add_argument("--landmarks", type=int, default=4)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--encoder-seed", type=int, default=0)
    p.add_argument("--sharpen", action="store_true",
                   help="boost each landmark node toward its own landmark before writing")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_gen_env)

    p = sub.add_parser("plan", help="plan a landmark route")
    common(p)
    p.add_argument("--graph", required=True)
    p.add_argument("--landmarks", required=True, help="comma-separated landmark texts")
    p.add_argument("--start", type=int, required=True)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--out", default=None, help="plan JSON path (stdout when omitted)")
    p.set_defaults(handler=cmd_plan)

    p = sub.add_parser("attack", help="rewrite graph images to divert a route")
    common(p)
    p.add_argument("--graph", required=True)
    p.add_argument("--start", type=int, default=None)
    p.add_argument("--target", type=int, default=None)
    p.add_argument("--landmarks", default=None)
    p.add_argument("--all-images", action="store_true",
                   help="align every image to a foreign landmark (detection population)")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_attack)

    p = sub.add_parser("detect", help="noise-sensitivity detection")
    common(p)
    p.add_argument("--clean")
    p.add_argument("--modified")
    p.add_argument("--sigmas", default=None, help="comma-separated, strictly increasing")
    p.add_argument("--graph")
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--path", default=None, help="comma-separated node ids to flag")
    p.add_argument("--trials", type=int, default=config.DETECT_TRIALS)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_detect)

    p = sub.add_parser("evaluate", help="route metrics for one attack or a seeded batch")
    common(p)
    p.add_argument("--clean-graph")
    p.add_argument("--attacked-graph")
    p.add_argument("--attack-report")
    p.add_argument("--landmarks")
    p.add_argument("--start", type=int, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--batch", type=int, default=0)
    p.add_argument("--small-nodes", type=int, default=config.SMALL_NODES)
    p.add_argument("--large-nodes", type=int, default=config.LARGE_NODES)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _configure_logging(args.log_level)
    try:
        return args.handler(args)
    except (InputError, GraphFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception:
        logger.exception("%s failed", args.command)
        return 1


if __name__ == "__main__":
    sys.exit(main())
