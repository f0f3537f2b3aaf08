"""Command-line experiment runner: train, eval, rollout, oracle, hhmm-demo."""

import argparse
import csv
import dataclasses
import json
import logging
import os
import platform
import sys
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .ce import (CEConfig, GenerativeSource, STRONG_PATIENCE, WEAK_PATIENCE, evaluate_policy, run_ce,
                 write_history)
from .errors import ConfigurationError, DocumentError, SizeCapExceeded
from .hhmm import (bn_enumerate_sequences, enumerate_sequences, example_spec, load_spec, random_spec, sample_bn,
                   sample_recursive, spec_to_document, termination_by_length)
from .oracle import brute_force_tree_search, mdp_dp, pomdp_belief_dp
from .policy import HhmmStructure, load_policy, save_policy, uniform_policy
from .pomdp import load_world, sample_batch
from .rng import ROLLOUT, episode_rng
from .tracking import TRAJECTORY_HEADER, TrackingConfig, TrackingEnv, TrackingState, render_frame, trajectory_rows

log = logging.getLogger("cehhmm")


@dataclass(frozen=True)
class ExperimentConfig:
    environment: str = "tracking"     # "tracking" or "world"
    case: int = 3
    world_path: str = None
    horizon: int = 100
    levels: tuple = (16, 16)
    ce: CEConfig = field(default_factory=CEConfig)
    round_report: bool = True

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["levels"] = list(self.levels)
        return d


# Benchmark presets use N = 1000 and the weak (100) or strong (500) patience of
# the original runs.  Smaller budgets stall the 2-level models: with patience
# 50 their elite mean never beats the first iteration and training stops early.
_WEAK = dict(samples_per_iteration=1000, convergence_patience=WEAK_PATIENCE)
_STRONG = dict(samples_per_iteration=1000, convergence_patience=STRONG_PATIENCE)
PRESETS = {
    "smoke": dict(case=3, levels=(4, 2), ce=dict(samples_per_iteration=100, convergence_patience=5,
                                                  max_iterations=30, evaluation_rollouts=100)),
    "case1": dict(case=1, levels=(16, 16), ce=_WEAK),
    "case2": dict(case=2, levels=(16, 16), ce=_WEAK),
    "case3-l1": dict(case=3, levels=(16,), ce=_WEAK),
    "case3-l2": dict(case=3, levels=(16, 16), ce=_WEAK),
    "case3-l3": dict(case=3, levels=(16, 2, 2), ce=_WEAK),
    "case3-l4": dict(case=3, levels=(16, 2, 2, 2), ce=_WEAK),
    "case3-l1-strong": dict(case=3, levels=(16,), ce=_STRONG),
    "case3-l2-strong": dict(case=3, levels=(16, 16), ce=_STRONG),
    "case3-l3-strong": dict(case=3, levels=(16, 2, 2), ce=_STRONG),
    "case3-l4-strong": dict(case=3, levels=(16, 2, 2, 2), ce=_STRONG),
    "case3-256-strong": dict(case=3, levels=(256, 256), ce=_STRONG),
}


def build_config(preset=None, config_doc=None, overrides=None):
    """Preset, then config file, then command-line overrides; later wins."""
    merged = {"ce": {}}
    for layer in (PRESETS.get(preset) if preset else None, config_doc, overrides):
        if not layer:
            continue
        for key, value in layer.items():
            if key == "ce":
                merged["ce"].update(value)
            elif value is not None:
                merged[key] = value
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(merged) - known
    if unknown:
        raise ConfigurationError(f"unknown config keys {sorted(unknown)}")
    ce_known = {f.name for f in dataclasses.fields(CEConfig)}
    if set(merged["ce"]) - ce_known:
        raise ConfigurationError(f"unknown ce keys {sorted(set(merged['ce']) - ce_known)}")
    horizon = merged.get("horizon", 100)
    ce = CEConfig(**{"horizon": horizon, **merged.pop("ce")})
    if "levels" in merged:
        merged["levels"] = tuple(int(v) for v in merged["levels"])
    cfg = ExperimentConfig(ce=ce, **merged)
    if cfg.environment not in ("tracking", "world"):
        raise ConfigurationError(f"unknown environment {cfg.environment!r}")
    if cfg.environment == "world" and not cfg.world_path:
        raise ConfigurationError("a world environment needs world_path")
    return cfg


def make_world(cfg):
    if cfg.environment == "tracking":
        return TrackingEnv(TrackingConfig(case=cfg.case, horizon=cfg.horizon))
    return load_world(cfg.world_path)


def make_structure(cfg, world):
    return HhmmStructure(tuple(cfg.levels), world.num_actions, world.num_observations)


def _report(mean, stderr, rollouts, rounding):
    out = {"mean": mean, "stderr": stderr, "rollouts": rollouts}
    out["mean_rounded"] = int(np.floor(mean + 0.5)) if rounding and np.isfinite(mean) else None
    return out


def _write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _manifest(command, cfg, argv, extra=None):
    doc = {
        "command": command,
        "argv": list(argv),
        "config": cfg.to_dict() if cfg is not None else None,
        "versions": {"cehhmm": __version__, "numpy": np.__version__, "python": platform.python_version()},
    }
    doc.update(extra or {})
    return doc


# -- subcommands ---------------------------------------------------------------

def cmd_train(args):
    cfg = _config_from_args(args)
    world = make_world(cfg)
    structure = make_structure(cfg, world)
    os.makedirs(args.out, exist_ok=True)

    def progress(rec):
        if rec.iteration % 10 == 0:
            log.info("iter %d elite %.3f best %.3f unsuccessful %d", rec.iteration, rec.elite_mean,
                     rec.best_so_far, rec.unsuccessful)

    result = run_ce(GenerativeSource(world), structure, cfg.ce, callback=progress)
    save_policy(result.best_params, os.path.join(args.out, "policy.json"))
    write_history(result.history, os.path.join(args.out, "history.csv"))
    summary = {
        "iterations": result.iterations_run,
        "best_iteration": result.best_iteration,
        "stop_reason": result.stop_reason,
        "best_elite_mean": result.history[result.best_iteration].elite_mean if result.best_iteration >= 0 else None,
        "evaluation": _report(result.best_mean_score, result.best_mean_stderr, cfg.ce.evaluation_rollouts,
                              cfg.round_report),
    }
    _write_json(os.path.join(args.out, "summary.json"), summary)
    _write_json(os.path.join(args.out, "manifest.json"), _manifest("train", cfg, args.argv))
    print(json.dumps(summary["evaluation"], sort_keys=True))
    return 0


def cmd_eval(args):
    cfg = _config_from_args(args)
    world = make_world(cfg)
    policy = load_policy(args.policy)
    _check_policy(policy, world)
    ce = dataclasses.replace(cfg.ce, evaluation_rollouts=args.rollouts)
    mean, se = evaluate_policy(GenerativeSource(world), policy, ce)
    report = _report(mean, se, args.rollouts, cfg.round_report)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_json(os.path.join(args.out, "eval.json"), report)
        _write_json(os.path.join(args.out, "manifest.json"),
                    _manifest("eval", cfg, args.argv, {"policy": args.policy}))
    print(json.dumps(report, sort_keys=True))
    return 0


def cmd_rollout(args):
    cfg = _config_from_args(args)
    world = make_world(cfg)
    policy = load_policy(args.policy) if args.policy else uniform_policy(make_structure(cfg, world))
    _check_policy(policy, world)
    ep = sample_batch(world, policy, cfg.horizon, [episode_rng(cfg.ce.seed, ROLLOUT)])[0]
    os.makedirs(args.out, exist_ok=True)
    if cfg.environment == "tracking":
        frames = [render_frame(TrackingState.from_row(row, t + 1)) for t, row in enumerate(ep.states)]
        with open(os.path.join(args.out, "trajectory.txt"), "w") as fh:
            fh.write("\n\n".join(frames))
            fh.write(f"\n\nV={ep.score:g}\n")
        header, rows = TRAJECTORY_HEADER, trajectory_rows(ep)
    else:
        header = ["t", "state", "action", "observation"]
        rows = [[t + 1, int(z), int(x), int(y)]
                for t, (z, x, y) in enumerate(zip(ep.states, ep.actions, ep.observations))]
        with open(os.path.join(args.out, "trajectory.txt"), "w") as fh:
            for r in rows:
                fh.write("t={} z={} x={} y={}\n".format(*r))
            fh.write(f"V={ep.score!r}\n")
    with open(os.path.join(args.out, "trajectory.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    _write_json(os.path.join(args.out, "manifest.json"),
                _manifest("rollout", cfg, args.argv, {"policy": args.policy}))
    print(f"V={ep.score:g}")
    return 0


def cmd_oracle(args):
    world = load_world(args.world)
    solvers = ["mdp", "belief", "tree"] if args.solver == "all" else [args.solver]
    out = {}
    for name in solvers:
        if name == "mdp":
            value, x1, _ = mdp_dp(world, args.horizon)
        elif name == "belief":
            value, x1 = pomdp_belief_dp(world, args.horizon)
        else:
            tree, value = brute_force_tree_search(world, args.horizon)
            x1 = tree[()]
        out[name] = {"value": value, "first_action": x1}
        print(f"{name}: value={value!r} first_action={x1}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_json(os.path.join(args.out, "oracle.json"), out)
    return 0


def cmd_hhmm_demo(args):
    rng = np.random.default_rng(args.seed)
    if args.spec:
        spec = load_spec(args.spec)
    elif args.random:
        spec = random_spec(rng, num_levels=3, root_may_not_end=False)
    else:
        spec = example_spec()
    rec = enumerate_sequences(spec, args.max_len)
    bn = bn_enumerate_sequences(spec, args.max_len)
    keys = sorted(set(rec) | set(bn), key=lambda s: (-rec.get(s, 0.0), s))
    diff = max((abs(rec.get(s, 0.0) - bn.get(s, 0.0)) for s in keys), default=0.0)
    lengths = termination_by_length(spec, args.max_len)
    print(f"levels={spec.num_levels} alphabet={spec.output_alphabet} sequences={len(keys)}")
    for s in keys[:args.show]:
        print(f"  {''.join(map(str, s)):<{args.max_len}}  recursive={rec.get(s, 0.0):.6f}  bn={bn.get(s, 0.0):.6f}")
    print(f"max |recursive - bn| = {diff:.3e}")
    print(f"terminated within {args.max_len}: enumerated={sum(rec.values()):.9f} length-recursion={lengths.sum():.9f}")
    samples = {"recursive": [], "bn": []}
    for _ in range(args.samples):
        samples["recursive"].append(list(sample_recursive(spec, rng, args.max_steps).outputs))
        samples["bn"].append(list(sample_bn(spec, rng, args.max_steps).outputs))
    for k in range(min(args.samples, 5)):
        print(f"  sample {k}: recursive={samples['recursive'][k]} bn={samples['bn'][k]}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_json(os.path.join(args.out, "hhmm_demo.json"), {
            "spec": spec_to_document(spec), "max_abs_difference": diff,
            "termination_within_max_len": float(lengths.sum()),
            "sequences": [{"outputs": list(s), "recursive": rec.get(s, 0.0), "bn": bn.get(s, 0.0)} for s in keys],
            "samples": samples})
    return 0


# -- argument handling -----------------------------------------------------------

def _check_policy(policy, world):
    if policy.num_actions != world.num_actions or policy.num_observations != world.num_observations:
        raise ConfigurationError(
            f"policy has {policy.num_actions} actions / {policy.num_observations} observations, "
            f"environment has {world.num_actions} / {world.num_observations}")


def _config_from_args(args):
    doc = None
    if getattr(args, "config", None):
        with open(args.config) as fh:
            doc = json.load(fh)
    overrides = {"case": args.case, "horizon": args.horizon,
                 "levels": [int(v) for v in args.levels.split(",")] if args.levels else None}
    if args.world:
        overrides.update(environment="world", world_path=args.world)
    ce = {"seed": args.seed, "workers": args.threads}
    for key in ("samples", "patience", "max_iterations", "rollouts", "smoothing"):
        value = getattr(args, key, None)
        if value is not None:
            name = {"samples": "samples_per_iteration", "patience": "convergence_patience",
                    "rollouts": "evaluation_rollouts"}.get(key, key)
            ce[name] = value
    if args.horizon is not None:
        ce["horizon"] = args.horizon
    overrides["ce"] = {k: v for k, v in ce.items() if v is not None}
    if args.no_round:
        overrides["round_report"] = False
    return build_config(args.preset, doc, overrides)


def _env_flags(p, rollouts_default=None):
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, help="sampling threads (results do not depend on it)")
    p.add_argument("--case", type=int, choices=(1, 2, 3))
    p.add_argument("--world", help="world JSON file instead of the tracking benchmark")
    p.add_argument("--horizon", type=int)
    p.add_argument("--levels", help="memory cardinalities, top level first, e.g. 16,2,2,2")
    p.add_argument("--no-round", action="store_true", help="omit the rounded mean")


def build_parser():
    parser = argparse.ArgumentParser(prog="cehhmm", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="cross-entropy training")
    _env_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--samples", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--max-iterations", dest="max_iterations", type=int)
    p.add_argument("--rollouts", type=int, help="evaluation rollouts for the summary")
    p.add_argument("--smoothing", type=float)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="Monte Carlo evaluation of a policy document")
    _env_flags(p)
    p.add_argument("--policy", required=True)
    p.add_argument("--rollouts", type=int, default=500)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("rollout", help="dump one episode turn by turn")
    _env_flags(p)
    p.add_argument("--policy", help="policy document (uniform policy when omitted)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("oracle", help="exact solvers on a world file")
    p.add_argument("--world", required=True)
    p.add_argument("--horizon", type=int, required=True)
    p.add_argument("--solver", choices=("mdp", "belief", "tree", "all"), default="belief")
    p.add_argument("--out")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("hhmm-demo", help="recursive vs BN semantics of a small HHMM")
    p.add_argument("--spec", help="HHMM spec JSON (built-in 3-level example when omitted)")
    p.add_argument("--random", action="store_true", help="use a random 3-level spec drawn from --seed")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-len", dest="max_len", type=int, default=5)
    p.add_argument("--max-steps", dest="max_steps", type=int, default=50)
    p.add_argument("--samples", type=int, default=5)
    p.add_argument("--show", type=int, default=10)
    p.add_argument("--out")
    p.set_defaults(func=cmd_hhmm_demo)
    return parser


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, DocumentError, SizeCapExceeded, FileNotFoundError) as exc:
        print(f"cehhmm {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
