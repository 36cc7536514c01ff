"""Command-line interface.

Subcommands: model, walk, perturb, collect-dataset, train-memory,
bench-latency, compare-warmstart.  Each reads a TOML run configuration,
writes CSV/JSON outputs into --out, and prints a short summary.  Exit codes:
0 success, 2 usage, 3 configuration error, 4 missing input file, 5 runtime
failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys


def _configure_threads(argv):
    # must happen before numpy initializes its thread pools
    n = "1"
    if "--threads" in argv:
        i = argv.index("--threads")
        if i + 1 < len(argv):
            n = argv[i + 1]
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, n)


def _build_parser():
    p = argparse.ArgumentParser(prog="wbmpc", description="Whole-body MPC walking toolkit")
    p.add_argument("--threads", type=int, default=1, help="BLAS thread cap (set before numpy loads)")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, needs_out=True):
        sp.add_argument("--config", required=True, help="TOML run configuration")
        sp.add_argument("--seed", type=int, default=None, help="override the run seed")
        if needs_out:
            sp.add_argument("--out", default="out", help="output directory")

    sp = sub.add_parser("model", help="model inspection")
    sp.add_argument("action", choices=["info"])
    sp.add_argument("--config", default=None)
    sp.add_argument("--model", dest="model_file", default=None, help="robot model JSON")

    sp = sub.add_parser("walk", help="nominal closed-loop walk")
    common(sp)

    sp = sub.add_parser("perturb", help="closed-loop walk with perturbation events")
    common(sp)

    sp = sub.add_parser("collect-dataset", help="collect a warm-start motion dataset")
    common(sp)
    sp.add_argument("--csv", action="store_true", help="also export the dataset inputs as CSV")

    sp = sub.add_parser("train-memory", help="train the warm-start memory on a dataset")
    common(sp)
    sp.add_argument("--dataset", required=True, help="dataset file from collect-dataset")

    sp = sub.add_parser("bench-latency", help="per-iteration latency by phase")
    common(sp)
    sp.add_argument("--cycles", type=int, default=None, help="walking steps to benchmark")

    sp = sub.add_parser("compare-warmstart", help="cold / previous / learned warm starts")
    common(sp)
    sp.add_argument("--memory", required=True, help="trained memory model JSON")
    sp.add_argument("--trials", type=int, default=None)
    return p


def _json_default(o):
    import numpy as np

    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if hasattr(o, "__dict__"):
        return {k: v for k, v in o.__dict__.items() if not k.startswith("_")}
    return str(o)


def _write_summary(out_dir, name, payload):
    path = os.path.join(out_dir, name)
    with open(path, "w") as f:
        json.dump(payload, f, indent=1, sort_keys=True, default=_json_default)
    return path


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    _configure_threads(argv)
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code else 0

    import numpy as np

    from wbmpc import harness, memory as memory_mod
    from wbmpc.config import ConfigError, load_config, RunConfig

    try:
        if args.command == "model":
            cfg = load_config(args.config) if args.config else RunConfig()
            if args.model_file:
                cfg.model_file = args.model_file
            ctx = harness.RunContext(cfg)
            m = ctx.model
            problem = ctx.build_problem(0.0, ctx.x0)
            dims = problem.dimensions()
            print(f"model: {len(m.link_names)} links, {m.nact} actuated joints "
                  f"({m.nq} position / {m.nv} velocity coordinates)")
            print(f"total mass {m.total_mass:.3f} kg, nominal COM height {m.z_c:.4f} m, "
                  f"gravity {m.gravity} m/s^2")
            print(f"frames: {', '.join(sorted(m.frames))}")
            print(f"torque limits: [{np.min(m.gamma_min):.0f}, {np.max(m.gamma_max):.0f}] N m")
            print("receding-horizon problem dimensions:")
            for k, v in dims.items():
                print(f"  {k}: {v}")
            return 0

        cfg = load_config(args.config)
        if getattr(args, "seed", None) is not None:
            cfg.rollout.seed = args.seed
        out_dir = getattr(args, "out", None)
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)

        if args.command in ("walk", "perturb"):
            import dataclasses

            rollout = cfg.rollout
            if args.command == "walk":
                rollout = dataclasses.replace(rollout, perturbations=[])
            elif not rollout.perturbations:
                raise ConfigError("perturbation", "the perturb command needs at least one event")
            ctx = harness.RunContext(cfg)
            if rollout.warm_start == "mlp":
                ctx.load_memory(rollout.memory_file or "")
            metrics, log = harness.closed_loop_rollout(ctx, rollout)
            metrics.to_csv(os.path.join(out_dir, "metrics.csv"))
            log.to_csv(os.path.join(out_dir, "trajectory.csv"), ctx.model, ctx.space)
            _write_summary(out_dir, "summary.json", {
                "command": args.command, "aggregates": metrics.aggregates,
                "seed": cfg.rollout.seed, "duration": rollout.duration,
            })
            agg = metrics.aggregates
            print(f"{args.command}: {agg['ticks']} ticks, mean iterations {agg['mean_iters']:.2f}, "
                  f"max ZMP bound violation {agg['max_violation']:.2e}, "
                  f"all ticks converged: {agg['all_converged']}")
            return 0

        if args.command == "collect-dataset":
            ctx = harness.RunContext(cfg)
            rng = np.random.default_rng(cfg.rollout.seed)
            nominal = harness.nominal_pass(ctx)
            harness.export_cp_reference(ctx, nominal, os.path.join(out_dir, "cp_reference.csv"))
            dataset = harness.collect_dataset(ctx, rng, nominal)
            path = os.path.join(out_dir, "dataset.bin")
            dataset.save(path)
            if args.csv:
                dataset.export_csv(os.path.join(out_dir, "dataset_inputs.csv"))
            _write_summary(out_dir, "summary.json", {
                "command": args.command, "counts": dataset.counts,
                "ticks_covered": len(dataset.tick_indices()), "samples": len(dataset),
            })
            print(f"collected {len(dataset)} samples over {len(dataset.tick_indices())} ticks "
                  f"({dataset.counts['discarded']} discarded) -> {path}")
            return 0

        if args.command == "train-memory":
            ctx = harness.RunContext(cfg)
            dataset = memory_mod.MotionDataset.load(args.dataset)
            model = harness.train_memory(ctx, dataset)
            path = os.path.join(out_dir, "memory.json")
            model.save(path)
            _write_summary(out_dir, "summary.json", {
                "command": args.command, "metrics": model.metrics["per_group_val_mse"],
                "ticks": len(model.ticks()), "networks": len(model.nets),
            })
            print(f"trained {len(model.nets)} networks over {len(model.ticks())} ticks -> {path}")
            print("held-out MSE per group:", model.metrics["per_group_val_mse"])
            return 0

        if args.command == "bench-latency":
            ctx = harness.RunContext(cfg)
            cycles = args.cycles if args.cycles is not None else cfg.benchmark.n_cycles
            result = harness.latency_benchmark(ctx, cycles)
            harness.write_latency_csv(result, os.path.join(out_dir, "latency.csv"))
            _write_summary(out_dir, "summary.json", {
                "command": args.command,
                "rows": result["rows"],
                "sd_over_mean": result.get("sd_over_mean"),
                "flatness_ratio": result.get("flatness_ratio"),
                "n_cycles": cycles,
            })
            print(f"latency over {cycles} cycles: flatness ratio "
                  f"{result.get('flatness_ratio', 1.0):.3f}, sd/mean {result.get('sd_over_mean', 0.0):.3f}")
            return 0

        if args.command == "compare-warmstart":
            ctx = harness.RunContext(cfg)
            ctx.load_memory(args.memory)
            result = harness.compare_warmstart(ctx, n_trials=args.trials)
            harness.write_compare_csv(result, os.path.join(out_dir, "compare.csv"))
            _write_summary(out_dir, "summary.json", {"command": args.command, **result})
            for mode, row in result["per_mode"].items():
                print(f"{mode:9s} mean residual cost {row['mean_residual_cost']:10.4f}  "
                      f"mean iters {row['mean_iters']:.2f}  predict {row['mean_predict_ms']:.3f} ms")
            return 0

        parser.error(f"unknown command {args.command}")
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 3
    except FileNotFoundError as e:
        print(f"missing file: {e}", file=sys.stderr)
        return 4
    except (ValueError, RuntimeError, FloatingPointError, KeyError) as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return 5
    return 2


if __name__ == "__main__":
    sys.exit(main())
