"""Command-line harness.

Verbs: synth (scene -> trace directory), validate (trace lint),
train (trace -> checkpoint + history), eval (checkpoint or named baseline
-> per-epoch log + summary), oracle (exact DP rollout), compare (all
methods x disruption values -> report).

Every command that produces files also writes run_manifest.json recording
the command line, config snapshot, seed, sha256 of inputs, and output
names, so a run can be reproduced exactly. Exit codes: 0 success,
1 internal error, 2 input/config error, 3 checkpoint/trace mismatch.
"""

import argparse
import csv
import hashlib
import json
import re
import sys
import traceback
from dataclasses import asdict, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import agent, baselines, scenario
from . import net as qnet
from . import trace as trace_store
from .errors import CompatibilityError
from .process import ProcessConfig

_BASELINE_RE = re.compile(r"^static-bs(\d+)$")


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _hash_path(path) -> str:
    """sha256 of a file, or of a directory's contents (sorted relative
    names + bytes; run_manifest.json excluded so run metadata does not
    perturb content identity)."""
    path = Path(path)
    h = hashlib.sha256()
    if path.is_dir():
        for p in sorted(path.rglob("*")):
            if p.is_file() and p.name != "run_manifest.json":
                h.update(str(p.relative_to(path)).encode())
                h.update(p.read_bytes())
    else:
        h.update(path.read_bytes())
    return h.hexdigest()


def _write_manifest(out_dir, command, argv, seed, config, inputs, outputs,
                    started, extra=None):
    manifest = {
        "command": command,
        "argv": list(argv),
        "started": started,
        "finished": _utc_now(),
        "seed": seed,
        "config": config,
        "inputs": {name: {"path": str(p), "sha256": _hash_path(p)}
                   for name, p in inputs.items()},
        "outputs": sorted(outputs),
    }
    if extra:
        manifest.update(extra)
    out = Path(out_dir) / "run_manifest.json"
    out.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(x) -> str:
    return repr(float(x))


def _policy_rows(steps):
    return [(s.epoch, s.assoc_bs, s.counter, s.action, _fmt(s.reward_bps))
            for s in steps]


def _handovers(steps) -> int:
    return sum(1 for s in steps if s.action != s.assoc_bs)


def _apply_window(tr, window):
    if window is None:
        return tr, None
    try:
        lo, hi = (int(part) for part in window.split(","))
    except Exception:
        raise ValueError(f"--window expects 't0,t1', got {window!r}")
    return tr.view(lo, hi), (lo, hi)


def _process_cfg(segment, stack_depth: int, tdis_ms: int) -> ProcessConfig:
    return ProcessConfig(
        num_bs=segment.num_bs,
        num_cameras=segment.num_cameras,
        stack_depth=stack_depth,
        epoch_interval_ms=segment.epoch_interval_ms,
        disruption_time_ms=tdis_ms,
    )


# -- checkpoint evaluation ----------------------------------------------------


def _check_checkpoint(net_cfg, meta, segment):
    cams = meta.get("cameras")
    cameras = tuple(cams) if cams else tuple(range(1, segment.num_cameras + 1))
    stack = int(meta.get("train_config", {}).get("stack_depth", 2))
    h, w = segment.frame_shape
    problems = []
    if (net_cfg.frame_height, net_cfg.frame_width) != (h, w):
        problems.append(
            f"frames {net_cfg.frame_height}x{net_cfg.frame_width} vs trace {h}x{w}"
        )
    if net_cfg.num_actions != segment.num_bs:
        problems.append(f"{net_cfg.num_actions} actions vs {segment.num_bs} BS")
    if net_cfg.side_features != segment.num_bs + 1:
        problems.append(
            f"{net_cfg.side_features} side features vs {segment.num_bs + 1} expected"
        )
    if max(cameras) > segment.num_cameras:
        problems.append(
            f"camera {max(cameras)} requested, trace has {segment.num_cameras}"
        )
    if net_cfg.in_channels != len(cameras) * stack:
        problems.append(
            f"{net_cfg.in_channels} input channels vs {len(cameras)} camera(s) "
            f"x {stack} stacked frames"
        )
    if problems:
        raise CompatibilityError("checkpoint/trace mismatch: " + "; ".join(problems))
    return cameras, stack


def _eval_checkpoint(path, segment, tdis_ms: int):
    params, net_cfg, meta = qnet.load_checkpoint(path)
    cameras, stack = _check_checkpoint(net_cfg, meta, segment)
    pcfg = _process_cfg(segment, stack, tdis_ms)
    return agent.evaluate_policy(params, net_cfg, segment, pcfg, cameras=cameras)


def _run_baseline(name: str, segment, pcfg: ProcessConfig, hysteresis_db: float):
    caps = segment.capacity_matrix()
    m = _BASELINE_RE.match(name)
    if m:
        return baselines.static_policy(caps, pcfg, int(m.group(1)))
    if name == "reactive":
        return baselines.reactive_policy(segment.powers_dbm, caps, pcfg, hysteresis_db)
    if name == "dp-oracle":
        return baselines.dp_oracle(caps, pcfg).rollout
    raise ValueError(
        f"unknown baseline {name!r}; use static-bs<k>, reactive, or dp-oracle"
    )


# -- verbs --------------------------------------------------------------------


def _dip_summary(scene) -> list:
    """Per-BS count of blockage intervals and attenuated epochs."""
    t_count = scene.num_epochs
    positions = [
        [scenario.pedestrian_position(p, t, scene.epoch_interval_ms)
         for t in range(t_count)]
        for p in scene.pedestrians
    ]
    lines = []
    for j in range(1, len(scene.bs_positions) + 1):
        blocked = np.array([
            scenario.blockage_attenuation_db(
                scene, [positions[p][t] for p in range(len(scene.pedestrians))], j
            ) > 0.0
            for t in range(t_count)
        ])
        intervals = int(np.sum(blocked[1:] & ~blocked[:-1]) + (1 if blocked[:1].any() else 0))
        lines.append(
            f"BS {j}: {intervals} blockage intervals, {int(blocked.sum())} epochs attenuated"
        )
    return lines


def cmd_synth(args, argv) -> int:
    started = _utc_now()
    inputs = {}
    if args.reference:
        scene = scenario.reference_scenario(
            num_epochs=args.epochs or 6000,
            seed=args.seed if args.seed is not None else 42,
        )
    else:
        if not args.scene:
            raise ValueError("synth needs --scene <path> or --reference")
        scene = scenario.load_scene(args.scene)
        inputs["scene"] = Path(args.scene)
        if args.seed is not None:
            scene = replace(scene, seed=args.seed)
        if args.epochs:
            scene = replace(scene, num_epochs=args.epochs)
    tr = scenario.synthesize_trace(scene)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trace_store.save(tr, out)
    outputs = ["manifest.json", "powers.csv"] + [
        f"camera_{i}.f32" for i in range(1, tr.num_cameras + 1)
    ]
    print(f"trace: T={tr.num_epochs} epochs, {tr.num_cameras} camera(s), "
          f"{tr.num_bs} BS, tau={tr.epoch_interval_ms} ms")
    for line in _dip_summary(scene):
        print(line)
    _write_manifest(out, "synth", argv, scene.seed, scenario.scene_to_dict(scene),
                    inputs, outputs, started)
    return 0


def cmd_validate(args, argv) -> int:
    problems = trace_store.validate(args.trace)
    if problems:
        for p in problems:
            print(f"violation: {p}", file=sys.stderr)
        return 2
    tr = trace_store.load(args.trace)
    print(f"trace OK: T={tr.num_epochs} epochs, {tr.num_cameras} camera(s), "
          f"{tr.num_bs} BS")
    return 0


def cmd_train(args, argv) -> int:
    started = _utc_now()
    tr = trace_store.load(args.trace)
    cfg_dict = {}
    inputs = {"trace": Path(args.trace)}
    if args.config:
        cfg_dict = json.loads(Path(args.config).read_text())
        if not isinstance(cfg_dict, dict):
            raise ValueError("config file must hold a JSON object")
        inputs["config"] = Path(args.config)
    if "cameras" in cfg_dict and cfg_dict["cameras"] is not None:
        cfg_dict["cameras"] = tuple(cfg_dict["cameras"])
    if args.seed is not None:
        cfg_dict["seed"] = args.seed
    if args.iterations is not None:
        cfg_dict["iterations"] = args.iterations
    if args.tdis is not None:
        cfg_dict["disruption_time_ms"] = args.tdis
    if args.cameras:
        cfg_dict["cameras"] = tuple(int(c) for c in args.cameras.split(","))
    try:
        cfg = agent.TrainConfig(**cfg_dict)
    except TypeError as e:
        raise ValueError(f"bad training config: {e}")
    t_prime = args.tprime if args.tprime is not None else (2 * tr.num_epochs) // 3
    train_seg, eval_seg = trace_store.split(tr, t_prime)
    result = agent.train(train_seg, eval_seg, cfg)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    qnet.save_checkpoint(out / "checkpoint.npz", result.best_params,
                         result.net_config, meta=result.checkpoint_meta)
    _write_csv(out / "history.csv", ["iteration", "epsilon", "eval_avg_bps"],
               [(r.iteration, _fmt(r.epsilon), _fmt(r.eval_average_bps))
                for r in result.history])
    config_snapshot = {k: (list(v) if isinstance(v, tuple) else v)
                       for k, v in asdict(cfg).items()}
    _write_manifest(
        out, "train", argv, cfg.seed, config_snapshot, inputs,
        ["checkpoint.npz", "history.csv"], started,
        extra={
            "t_prime": t_prime,
            "encoder_channels": result.net_config.in_channels,
            "best_iteration": result.best_iteration,
            "best_average_bps": result.best_average_bps,
            "history": [[r.iteration, r.epsilon, r.eval_average_bps]
                        for r in result.history],
        },
    )
    print(f"trained {cfg.iterations} iteration(s); best at iteration "
          f"{result.best_iteration} with eval average "
          f"{result.best_average_bps:.6e} bps")
    return 0


def cmd_eval(args, argv) -> int:
    started = _utc_now()
    full = trace_store.load(args.trace)
    segment, window = _apply_window(full, args.window)
    inputs = {"trace": Path(args.trace)}
    if args.checkpoint and args.baseline:
        raise ValueError("pass either --checkpoint or --baseline, not both")
    if args.checkpoint:
        inputs["checkpoint"] = Path(args.checkpoint)
        result = _eval_checkpoint(args.checkpoint, segment, args.tdis)
        method = "checkpoint"
    elif args.baseline:
        pcfg = _process_cfg(segment, args.stack_depth, args.tdis)
        result = _run_baseline(args.baseline, segment, pcfg, args.hysteresis)
        method = args.baseline
    else:
        raise ValueError("eval needs --checkpoint <path> or --baseline <name>")

    caps = segment.capacity_matrix()
    header = ["t", "j", "c", "action", "reward_bps"] + [
        f"capacity_bs{k}_bps" for k in range(1, segment.num_bs + 1)
    ]
    rows = [
        (s.epoch, s.assoc_bs, s.counter, s.action, _fmt(s.reward_bps),
         *(_fmt(caps[k, s.epoch + 1]) for k in range(segment.num_bs)))
        for s in result.steps
    ]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "eval_log.csv", header, rows)
    summary = {
        "method": method,
        "tdis_ms": args.tdis,
        "window": list(window) if window else None,
        "num_steps": len(result.steps),
        "average_bps": result.average_bps,
        "handover_count": _handovers(result.steps),
    }
    (out / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n"
    )
    _write_manifest(out, "eval", argv, None,
                    {"tdis_ms": args.tdis, "method": method,
                     "stack_depth": args.stack_depth,
                     "hysteresis_db": args.hysteresis,
                     "window": list(window) if window else None},
                    inputs, ["eval_log.csv", "summary.json"], started)
    print(f"{method}: average {result.average_bps:.6e} bps over "
          f"{len(result.steps)} epochs, {summary['handover_count']} handover(s)")
    return 0


def cmd_oracle(args, argv) -> int:
    started = _utc_now()
    full = trace_store.load(args.trace)
    segment, window = _apply_window(full, args.window)
    pcfg = _process_cfg(segment, args.stack_depth, args.tdis)
    dp = baselines.dp_oracle(segment.capacity_matrix(), pcfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "oracle_log.csv", ["t", "j", "c", "action", "reward_bps"],
               _policy_rows(dp.rollout.steps))
    summary = {
        "tdis_ms": args.tdis,
        "window": list(window) if window else None,
        "num_steps": len(dp.rollout.steps),
        "average_bps": dp.average_bps,
        "handover_count": dp.handover_count,
    }
    (out / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n"
    )
    _write_manifest(out, "oracle", argv, None,
                    {"tdis_ms": args.tdis, "stack_depth": args.stack_depth,
                     "window": list(window) if window else None},
                    {"trace": Path(args.trace)},
                    ["oracle_log.csv", "summary.json"], started)
    print(f"dp-oracle: average {dp.average_bps:.6e} bps, "
          f"{dp.handover_count} handover(s)")
    return 0


def cmd_compare(args, argv) -> int:
    started = _utc_now()
    full = trace_store.load(args.trace)
    segment, window = _apply_window(full, args.window)
    tdis_list = [int(x) for x in args.tdis.split(",")] if args.tdis else [0, 60, 120]
    inputs = {"trace": Path(args.trace)}

    methods = [f"static-bs{k}" for k in range(1, segment.num_bs + 1)]
    methods += ["reactive", "dp-oracle"]
    checkpoints = {}
    if args.checkpoint_multi:
        checkpoints["multi-camera"] = args.checkpoint_multi
        inputs["checkpoint_multi"] = Path(args.checkpoint_multi)
    if args.checkpoint_single:
        checkpoints["single-camera"] = args.checkpoint_single
        inputs["checkpoint_single"] = Path(args.checkpoint_single)
    methods = list(checkpoints) + methods

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = {"tdis_ms": tdis_list,
              "window": list(window) if window else None,
              "methods": {m: {} for m in methods}}
    outputs = ["report.json"]
    for tdis in tdis_list:
        pcfg = _process_cfg(segment, args.stack_depth, tdis)
        for m in methods:
            if m in checkpoints:
                result = _eval_checkpoint(checkpoints[m], segment, tdis)
            else:
                result = _run_baseline(m, segment, pcfg, args.hysteresis)
            csv_name = f"{m}_tdis{tdis}.csv"
            _write_csv(out / csv_name, ["t", "j", "c", "action", "reward_bps"],
                       _policy_rows(result.steps))
            outputs.append(csv_name)
            report["methods"][m][str(tdis)] = {
                "average_bps": result.average_bps,
                "handover_count": _handovers(result.steps),
                "csv": csv_name,
            }
    improvement = {}
    for tdis in tdis_list:
        key = str(tdis)
        if "multi-camera" in report["methods"] and "single-camera" in report["methods"]:
            multi = report["methods"]["multi-camera"][key]["average_bps"]
            single = report["methods"]["single-camera"][key]["average_bps"]
            improvement[key] = (multi - single) / single
        else:
            improvement[key] = None
    report["relative_improvement_multi_vs_single"] = improvement
    (out / "report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n"
    )
    _write_manifest(out, "compare", argv, None,
                    {"tdis_ms": tdis_list, "stack_depth": args.stack_depth,
                     "hysteresis_db": args.hysteresis,
                     "window": list(window) if window else None},
                    inputs, outputs, started)
    for m in methods:
        for tdis in tdis_list:
            row = report["methods"][m][str(tdis)]
            print(f"{m:>16}  tdis={tdis:>4} ms  avg={row['average_bps']:.6e} bps  "
                  f"handovers={row['handover_count']}")
    return 0


# -- wiring -------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="camho",
        description="camera-aided proactive handover: trace synthesis, "
                    "DQN training, baselines, comparison reports",
    )
    sub = p.add_subparsers(dest="verb", required=True)

    s = sub.add_parser("synth", help="render a scene into a trace directory")
    s.add_argument("--scene", help="scene config JSON")
    s.add_argument("--reference", action="store_true",
                   help="use the built-in two-camera crossing scenario")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--epochs", type=int, default=None)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("validate", help="check a trace directory")
    s.add_argument("--trace", required=True)
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("train", help="train a DQN agent on a trace")
    s.add_argument("--trace", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config", help="JSON with training-config overrides")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--tprime", type=int, default=None,
                   help="training/evaluation split epoch (default 2T/3)")
    s.add_argument("--iterations", type=int, default=None)
    s.add_argument("--tdis", type=int, default=None,
                   help="service disruption time in ms")
    s.add_argument("--cameras", help="comma-separated camera ids, e.g. 1,2")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="greedy rollout of a checkpoint or baseline")
    s.add_argument("--trace", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--checkpoint")
    s.add_argument("--baseline",
                   help="static-bs<k> | reactive | dp-oracle")
    s.add_argument("--tdis", type=int, default=0)
    s.add_argument("--window", help="restrict to epochs t0,t1")
    s.add_argument("--stack-depth", type=int, default=2, dest="stack_depth")
    s.add_argument("--hysteresis", type=float, default=0.0,
                   help="reactive baseline hysteresis in dB")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("oracle", help="exact DP rollout over a trace")
    s.add_argument("--trace", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--tdis", type=int, default=0)
    s.add_argument("--window", help="restrict to epochs t0,t1")
    s.add_argument("--stack-depth", type=int, default=2, dest="stack_depth")
    s.set_defaults(func=cmd_oracle)

    s = sub.add_parser("compare", help="evaluate all methods across T_dis values")
    s.add_argument("--trace", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--checkpoint-multi", dest="checkpoint_multi")
    s.add_argument("--checkpoint-single", dest="checkpoint_single")
    s.add_argument("--tdis", help="comma-separated ms values (default 0,60,120)")
    s.add_argument("--window", help="restrict to epochs t0,t1")
    s.add_argument("--stack-depth", type=int, default=2, dest="stack_depth")
    s.add_argument("--hysteresis", type=float, default=0.0)
    s.set_defaults(func=cmd_compare)

    return p


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    used_argv = list(argv) if argv is not None else sys.argv[1:]
    try:
        return args.func(args, used_argv)
    except CompatibilityError as e:
        print(f"compatibility error: {e}", file=sys.stderr)
        return 3
    except (ValueError, KeyError, TypeError, OSError) as e:
        print(f"input error: {e}", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
