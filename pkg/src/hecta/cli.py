"""Command-line interface.

    hecta gen     --preset sce2 --seed 7
    hecta train   --scenario s.scn --episodes 100 --seed 1
    hecta eval    --policy greedy --scenario zhongfu --time-limits 6,9,12
    hecta robust  --checkpoint ckpt.prm --scenario s.scn --variants 50
    hecta trace   --policy greedy --scenario s.scn
    hecta plot    --metrics runs/train/metrics.csv
    hecta rerun   runs/train/manifest.json

Every command writes into its own output directory (``--out``, default
``$HECTA_OUT/<command>``) together with one ``manifest.json``. Exit codes:
0 ok, 2 usage, 3 input error, 4 numerical abort.
"""
import argparse
import csv
import hashlib
import json
import os
import sys
import time

from . import __version__
from .learning import (
    NumericalAbort, TrainConfig, evaluate_policy, load_checkpoint, read_metrics_csv,
    robustness_sweep, run_episode_plain, run_training, save_checkpoint, write_metrics_csv,
)
from .neuralcore.kernels import BACKEND
from .scenario import (
    BUNDLED, PRESETS, ParseError, VariationKind, generate_scenario, load_bundled,
    FIXED, fixed_spec, preset_params, read_scenario, save_scenario,
)
from .world import Layout, World, initial_rows, trajectory_rows, write_trajectory_csv

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3, 4


class InputError(Exception):
    pass


def sha256_file(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def scenario_hash(name):
    if name in BUNDLED:
        return hashlib.sha256(save_scenario(load_bundled(name))).hexdigest()
    return sha256_file(name)


def load_spec(name):
    try:
        return read_scenario(name)
    except FileNotFoundError:
        raise InputError(f"scenario file not found: {name}") from None
    except ParseError as exc:
        raise InputError(f"invalid scenario {name}: {exc}") from None


def out_dir(args):
    path = args.out or os.path.join(os.environ.get("HECTA_OUT", "runs"), args.command)
    os.makedirs(path, exist_ok=True)
    return path


def write_manifest(directory, args, argv, outputs, seeds, started, scenario=None):
    manifest = {
        "command": args.command,
        "argv": argv,
        "cwd": os.getcwd(),
        "args": {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)},
        "scenario": scenario,
        "scenario_sha256": scenario_hash(scenario) if scenario else None,
        "version": __version__,
        "kernel_backend": BACKEND,
        "seeds": seeds,
        "outputs": {os.path.basename(p): sha256_file(p) for p in outputs},
        "wall_clock_seconds": round(time.time() - started, 3),
    }
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return manifest


def _policy_from_args(args):
    """(policy object for evaluate_policy, hard_coop flag, label)."""
    if args.policy == "checkpoint":
        if not args.checkpoint:
            raise InputError("--policy checkpoint needs --checkpoint")
        try:
            net, params, meta = load_checkpoint(args.checkpoint)
        except FileNotFoundError:
            raise InputError(f"checkpoint not found: {args.checkpoint}") from None
        except (ValueError, KeyError) as exc:
            raise InputError(f"unreadable checkpoint {args.checkpoint}: {exc}") from None
        variant = meta.get("train", {}).get("variant", "hard")
        return (net, params), variant == "hard", "hecta4er" if variant == "hard" else "hecta4er-voluntary"
    return args.policy, True, args.policy


# -- verbs -----------------------------------------------------------------------------

def cmd_gen(args, argv):
    started = time.time()
    d = out_dir(args)
    outputs = []
    for i in range(args.count):
        seed = args.seed + i
        if args.preset in FIXED:
            spec = fixed_spec(args.preset)
        else:
            try:
                spec = generate_scenario(preset_params(args.preset, args.variant), seed)
            except KeyError as exc:
                raise InputError(str(exc.args[0])) from None
        if args.time_limit:
            spec = spec.with_time_limit(args.time_limit)
        name = args.name or f"{args.preset}" + (f"_v{args.variant}" if args.variant else "")
        path = os.path.join(d, f"{name}_seed{seed}.scn" if args.preset not in FIXED else f"{name}.scn")
        with open(path, "wb") as fh:
            fh.write(save_scenario(spec))
        outputs.append(path)
        print(f"{path}: {spec.grid_height}x{spec.grid_width}, {len(spec.tasks)} tasks, "
              f"{len(spec.entities)} entities, {len(spec.obstacles)} obstacles")
    write_manifest(d, args, argv, outputs, [args.seed + i for i in range(args.count)], started)
    return EXIT_OK


def train_config_from_args(args):
    kw = {f: getattr(args, f) for f in TrainConfig.field_names() if getattr(args, f, None) is not None}
    try:
        return TrainConfig(**kw)
    except ValueError as exc:
        raise InputError(str(exc)) from None


def cmd_train(args, argv):
    started = time.time()
    spec = load_spec(args.scenario)
    config = train_config_from_args(args)
    d = out_dir(args)

    def progress(row):
        if not args.quiet and (row["episode"] % args.log_every == 0 or row["episode"] == config.episodes):
            print(f"episode {row['episode']:6d}  tcr {row['tcr']:.3f}  loss {row['loss']:.4g}  "
                  f"eps {row['epsilon']:.3f}  lr {row['lr']:.3g}", flush=True)

    result = run_training(spec, config, checkpoint_dir=d if config.checkpoint_every else None,
                          dump_dir=d, progress=progress)
    ckpt = os.path.join(d, "checkpoint.prm")
    save_checkpoint(ckpt, result.net, result.params, config, config.episodes)
    metrics = os.path.join(d, "metrics.csv")
    write_metrics_csv(metrics, result.metrics)
    write_manifest(d, args, argv, [ckpt, metrics] + result.checkpoints, [config.seed], started,
                   args.scenario)
    print(f"wrote {ckpt} and {metrics}")
    return EXIT_OK


def _time_limits(args, spec):
    if args.time_limits:
        try:
            return [int(x) for x in args.time_limits.split(",")]
        except ValueError:
            raise InputError(f"bad --time-limits {args.time_limits!r}") from None
    return [args.time_limit or spec.time_limit]


def cmd_eval(args, argv):
    started = time.time()
    spec = load_spec(args.scenario)
    policy, hard, label = _policy_from_args(args)
    d = out_dir(args)
    path = os.path.join(d, "eval.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["policy", "time_limit", "mode", "n", "mean", "std", "ci95"])
        for tl in _time_limits(args, spec):
            res = evaluate_policy(policy, spec, args.seeds, args.mode, args.seed, args.epsilon,
                                  tl, hard_coop=hard and not args.voluntary)
            w.writerow([label, tl, args.mode, res["n"], repr(res["mean"]), repr(res["std"]),
                        repr(res["ci95"])])
            print(f"{label:20s} T={tl:3d}  TCR {100 * res['mean']:6.2f}% "
                  f"± {100 * (res['ci95'] if res['n'] > 1 else 0.0):.2f} (95% CI, n={res['n']})")
    write_manifest(d, args, argv, [path], [args.seed], started, args.scenario)
    return EXIT_OK


def cmd_robust(args, argv):
    started = time.time()
    spec = load_spec(args.scenario)
    policy, hard, label = _policy_from_args(args)
    kinds = [VariationKind(k) for k in args.kinds.split(",")] if args.kinds else list(VariationKind)
    table = robustness_sweep(policy, spec, kinds, args.variants, args.seed, args.mode, hard)
    d = out_dir(args)
    path = os.path.join(d, "robust.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["policy"] + [k.value for k in kinds])
        if table:
            w.writerow([label] + [repr(table[k.value]["mean"]) for k in kinds])
    for k in kinds:
        if table:
            print(f"{k.value:20s} mean TCR {100 * table[k.value]['mean']:6.2f}%")
    write_manifest(d, args, argv, [path], [args.seed], started, args.scenario)
    return EXIT_OK


def cmd_trace(args, argv):
    import numpy as np
    from .learning import make_policy
    started = time.time()
    spec = load_spec(args.scenario)
    if args.time_limit:
        spec = spec.with_time_limit(args.time_limit)
    policy, hard, label = _policy_from_args(args)
    act = make_policy(policy, 0.0)
    if hasattr(act, "reset"):
        act.reset()
    world = World(spec, Layout(spec), hard_coop=hard and not args.voluntary)
    rows = initial_rows(world)
    run_episode_plain(world, act, np.random.default_rng(args.seed),
                      trace=lambda w, t, out: rows.extend(trajectory_rows(w, t, out.reward)))
    d = out_dir(args)
    path = os.path.join(d, "trajectory.csv")
    write_trajectory_csv(path, rows)
    print(f"{label}: {world.completed}/{world.n_tasks} tasks in {world.t} steps -> {path}")
    write_manifest(d, args, argv, [path], [args.seed], started, args.scenario)
    return EXIT_OK


def _read_csv(path):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except FileNotFoundError:
        raise InputError(f"file not found: {path}") from None
    if not rows:
        raise InputError(f"{path}: no data rows")
    return rows


def cmd_plot(args, argv):
    from . import plots
    started = time.time()
    d = out_dir(args)
    outputs = []
    if not (args.metrics or args.trajectory or args.eval):
        raise InputError("plot needs --metrics, --trajectory or --eval")
    try:
        if args.metrics:
            _read_csv(args.metrics)
            metrics = read_metrics_csv(args.metrics)
            outputs.append(plots.training_curve(metrics, os.path.join(d, "training_curve.svg"),
                                                args.window))
        if args.trajectory:
            rows = _read_csv(args.trajectory)
            if not args.scenario:
                raise InputError("--trajectory needs --scenario for the map")
            spec = load_spec(args.scenario)
            p = os.path.join(d, "trajectory.svg")
            plots.trajectory_overlay(spec, rows, p)
            outputs.append(p)
        if args.eval:
            rows = _read_csv(args.eval)
            labels = [f"{r['policy']} T={r['time_limit']}" for r in rows]
            outputs.append(plots.tcr_bars(labels, [float(r["mean"]) for r in rows],
                                          [float(r["ci95"]) for r in rows],
                                          os.path.join(d, "tcr_bars.svg")))
    except (KeyError, ValueError) as exc:
        raise InputError(f"malformed input: {exc}") from None
    for p in outputs:
        print(p)
    write_manifest(d, args, argv, outputs, [], started, args.scenario)
    return EXIT_OK


def cmd_rerun(args, argv):
    try:
        with open(args.manifest) as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise InputError(f"manifest not found: {args.manifest}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"malformed manifest: {exc}") from None
    old = list(manifest["argv"])
    stripped = []
    skip = False
    for tok in old:
        if skip:
            skip = False
            continue
        if tok == "--out":
            skip = True
            continue
        if tok.startswith("--out="):
            continue
        stripped.append(tok)
    target = args.out or os.path.join(os.path.dirname(os.path.abspath(args.manifest)), "rerun")
    target = os.path.abspath(target)
    here = os.getcwd()
    os.chdir(manifest.get("cwd", here))
    try:
        if manifest.get("scenario") and manifest.get("scenario_sha256"):
            if scenario_hash(manifest["scenario"]) != manifest["scenario_sha256"]:
                raise InputError(f"scenario {manifest['scenario']} changed since the recorded run")
        return main(stripped + ["--out", target])
    finally:
        os.chdir(here)


# -- parser ----------------------------------------------------------------------------

def _add_train_flags(p):
    d = TrainConfig()
    g = p.add_argument_group("training configuration")
    g.add_argument("--episodes", type=int, default=d.episodes)
    g.add_argument("--time-limit", dest="time_limit", type=int, default=None,
                   help="override the scenario's time limit")
    g.add_argument("--gamma", type=float, default=d.gamma)
    g.add_argument("--lr0", type=float, default=d.lr0)
    g.add_argument("--lr-decay-rate", type=float, default=d.lr_decay_rate)
    g.add_argument("--lr-decay-interval", type=int, default=d.lr_decay_interval)
    g.add_argument("--eps-start", type=float, default=d.eps_start)
    g.add_argument("--eps-end", type=float, default=d.eps_end)
    g.add_argument("--eps-anneal", type=float, default=d.eps_anneal,
                   help="fraction of episodes over which epsilon decays")
    g.add_argument("--batch-size", type=int, default=d.batch_size)
    g.add_argument("--buffer-capacity", type=int, default=d.buffer_capacity)
    g.add_argument("--target-sync", type=int, default=d.target_sync)
    g.add_argument("--lambda-opt", type=float, default=d.lambda_opt)
    g.add_argument("--lambda-nopt", type=float, default=d.lambda_nopt)
    g.add_argument("--clip", type=float, default=d.clip)
    g.add_argument("--rmsprop-alpha", type=float, default=d.rmsprop_alpha)
    g.add_argument("--rmsprop-eps", type=float, default=d.rmsprop_eps)
    g.add_argument("--hidden", type=int, default=d.hidden)
    g.add_argument("--mixer-hidden", type=int, default=d.mixer_hidden)
    g.add_argument("--ablate", choices=["eiem", "sedm"], default=None)
    g.add_argument("--variant", choices=["hard", "voluntary"], default=d.variant)
    g.add_argument("--v-grad-to-inputs", action="store_true", default=d.v_grad_to_inputs)
    g.add_argument("--train-steps-per-episode", type=int, default=d.train_steps_per_episode)
    g.add_argument("--no-snapshots", dest="store_snapshots", action="store_false")
    g.add_argument("--checkpoint-every", type=int, default=d.checkpoint_every)
    g.add_argument("--seed", type=int, default=d.seed)


def _add_policy_flags(p):
    p.add_argument("--policy", choices=["greedy", "random", "checkpoint"], default="checkpoint")
    p.add_argument("--checkpoint")
    p.add_argument("--voluntary", action="store_true",
                   help="disable the forced UGV rescue during evaluation")


def build_parser():
    parser = argparse.ArgumentParser(prog="hecta", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__} ({BACKEND})")
    sub = parser.add_subparsers(dest="command", required=True)

    def verb(name, func, help):
        p = sub.add_parser(name, help=help)
        p.set_defaults(func=func)
        p.add_argument("--out", help="output directory (default $HECTA_OUT/<command>)")
        return p

    p = verb("gen", cmd_gen, "generate scenario files")
    p.add_argument("--preset", required=True, choices=sorted(PRESETS) + sorted(FIXED))
    p.add_argument("--variant", type=int, default=None, help="1-based variant of multi-valued presets")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--time-limit", type=int, default=None)
    p.add_argument("--name", default=None)

    p = verb("train", cmd_train, "train HECTA4ER on a scenario")
    p.add_argument("--scenario", required=True)
    p.add_argument("--quiet", action="store_true")
    p.add_argument("--log-every", type=int, default=100)
    _add_train_flags(p)

    p = verb("eval", cmd_eval, "evaluate a policy's task completion rate")
    p.add_argument("--scenario", required=True)
    _add_policy_flags(p)
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=["greedy-exec", "stochastic"], default="greedy-exec")
    p.add_argument("--epsilon", type=float, default=0.05)
    p.add_argument("--time-limit", type=int, default=None)
    p.add_argument("--time-limits", default=None, help="comma-separated list, one row each")

    p = verb("robust", cmd_robust, "robustness sweep over perturbed scenarios")
    p.add_argument("--scenario", required=True)
    _add_policy_flags(p)
    p.add_argument("--variants", type=int, default=50)
    p.add_argument("--kinds", default=None, help="comma-separated variation kinds")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=["greedy-exec", "stochastic"], default="greedy-exec")

    p = verb("trace", cmd_trace, "export one rollout's trajectory as CSV")
    p.add_argument("--scenario", required=True)
    _add_policy_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--time-limit", type=int, default=None)

    p = verb("plot", cmd_plot, "render SVG figures from CSV outputs")
    p.add_argument("--metrics")
    p.add_argument("--trajectory")
    p.add_argument("--eval")
    p.add_argument("--scenario")
    p.add_argument("--window", type=int, default=200)

    p = sub.add_parser("rerun", help="re-execute a command from its manifest")
    p.set_defaults(func=cmd_rerun)
    p.add_argument("manifest")
    p.add_argument("--out", default=None)
    return parser


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.func(args, argv)
    except InputError as exc:
        print(f"hecta: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalAbort as exc:
        print(f"hecta: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
