"""Command-line front end.

Subcommands: parse, solve, train, evaluate, compare, perturb, replay.

Exit codes: 0 success, 1 instance/parse error (or absent comparison
cells), 2 configuration error, 3 training aborted on non-finite values,
4 replay mismatch.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import random
import sys
from dataclasses import asdict, fields
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .env import EnvConfig, JobShopEnv
from .instance import (
    Format,
    Instance,
    InstanceError,
    bounds_for,
    bundled_names,
    load_bundled,
    parse,
    serialize,
    serialize_standard,
)
from .manifest import RunManifest, sha256_file
from .osm import OsmConfig, OsmState, apply_swaps, sample_swaps, swap_count, tau_for_swap_level
from .ppo import PolicyParams, ShapeMismatch, Trainer, TrainerConfig, TrainingDiverged, evaluate, load_params
from .report import ABSENT, ComparisonRow, published_makespans, to_csv, to_text
from .rules import Rule, RuleKind, choose, dispatch

log = logging.getLogger("jobshop_rl")

EXIT_OK, EXIT_PARSE, EXIT_CONFIG, EXIT_DIVERGED, EXIT_REPLAY = 0, 1, 2, 3, 4


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# config handling
# --------------------------------------------------------------------------

SECTIONS = {"env": EnvConfig, "trainer": TrainerConfig, "osm": OsmConfig}


def _literal(raw: str) -> Any:
    low = raw.strip().lower()
    if low in ("none", "null", ""):
        return None
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    for cast in (int, float):
        try:
            return cast(raw)
        except ValueError:
            pass
    return raw.strip()


def read_overrides(path) -> dict[str, dict[str, Any]]:
    """``key=value`` lines; keys are ``section.field`` or an unambiguous bare field."""
    out: dict[str, dict[str, Any]] = {s: {} for s in SECTIONS}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, value = (p.strip() for p in line.split("=", 1))
        if "." in key:
            section, name = key.split(".", 1)
            if section not in SECTIONS:
                raise ConfigError(f"{path}:{lineno}: unknown section {section!r}")
        else:
            owners = [s for s, cls in SECTIONS.items() if key in {f.name for f in fields(cls)}]
            if len(owners) != 1:
                raise ConfigError(f"{path}:{lineno}: {'ambiguous' if owners else 'unknown'} key {key!r}")
            section, name = owners[0], key
        if name not in {f.name for f in fields(SECTIONS[section])}:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        out[section][name] = _literal(value)
    return out


def _build(cls, values: dict[str, Any]):
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {cls.__name__}: {exc}") from None


def build_configs(args) -> tuple[EnvConfig, TrainerConfig, OsmConfig]:
    over = read_overrides(args.config) if args.config else {s: {} for s in SECTIONS}
    trainer = dict(over["trainer"])
    trainer.setdefault("seed", args.seed)
    if getattr(args, "steps", None) is not None:
        trainer["total_steps"] = args.steps
    env = dict(over["env"])
    if getattr(args, "rollout_budget", None) is not None:
        env["rollout_budget"] = args.rollout_budget
    if getattr(args, "occupancy_threshold", None) is not None:
        env["occupancy_threshold"] = args.occupancy_threshold
    osm = dict(over["osm"])
    osm.setdefault("enabled", False)
    if getattr(args, "osm_tau", None) is not None:
        osm.update(tau=args.osm_tau, enabled=True)
    if getattr(args, "osm", None) == "off":
        osm["enabled"] = False
    elif getattr(args, "osm", None) == "on":
        osm["enabled"] = True
    return _build(EnvConfig, env), _build(TrainerConfig, trainer), _build(OsmConfig, osm)


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------

def resolve_instance(source: str, fmt: str | None) -> tuple[Instance, str]:
    """Load a path, falling back to a bundled benchmark name."""
    path = Path(source)
    if path.is_file():
        chosen = fmt or ("taillard" if path.suffix == ".tai" else "std")
        return parse(path.read_text(), Format(chosen), name=path.stem), str(path)
    if source in bundled_names():
        return load_bundled(source), f"bundled:{source}"
    raise FileNotFoundError(f"no such instance file: {source}")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _manifest(args, argv, instance_paths, config: dict[str, Any]) -> RunManifest:
    return RunManifest(args.cmd, list(argv), instance_paths, args.format, config, args.seed)


def _params_digest(params: PolicyParams) -> str:
    h = hashlib.sha256()
    for a in params.arrays():
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_parse(args, argv) -> int:
    try:
        inst, where = resolve_instance(args.instance, args.format)
    except (OSError, InstanceError) as exc:
        return _fail(EXIT_PARSE, str(exc))
    b = bounds_for(inst)
    print(f"ok {inst.name}: {inst.n_jobs}x{inst.n_machines}, {inst.n_ops} operations, lower bound {b.lower} ({b.source.value})")
    if args.to:
        sys.stdout.write(serialize(inst, Format(args.to)))
    return EXIT_OK


def cmd_solve(args, argv) -> int:
    if bool(args.rule) == bool(args.checkpoint):
        return _fail(EXIT_CONFIG, "give exactly one of --rule or --checkpoint")
    try:
        inst, where = resolve_instance(args.instance, args.format)
    except (OSError, InstanceError) as exc:
        return _fail(EXIT_PARSE, str(exc))
    out = _out_dir(args)
    config: dict[str, Any] = {}
    trace = None
    if args.rule:
        try:
            rule = Rule.parse(args.rule, seed=args.seed)
        except ValueError:
            return _fail(EXIT_CONFIG, f"unknown rule {args.rule!r}")
        config["rule"] = asdict(rule) | {"kind": rule.kind.value, "tie_break": rule.tie_break.value}
        env = JobShopEnv(inst, EnvConfig(rollout_budget=inst.total_work, record_trace=args.trace))
        env.reset()
        rng = random.Random(args.seed)
        while not env.finished:
            env.step(choose(rule, env, rng))
        schedule, trace = env.schedule(), env.trace
    else:
        try:
            params = load_params(args.checkpoint)
            res = evaluate(params, inst, args.episodes, args.mode, seed=args.seed)
        except OSError as exc:
            return _fail(EXIT_CONFIG, f"cannot read checkpoint: {exc}")
        except ShapeMismatch as exc:
            return _fail(EXIT_CONFIG, str(exc))
        config.update(checkpoint=args.checkpoint, mode=args.mode, episodes=args.episodes)
        schedule = res.schedule
    man = _manifest(args, argv, [where], config)
    (out / "schedule.json").write_text(schedule.to_json() + "\n")
    files = {"schedule.json": sha256_file(out / "schedule.json")}
    if trace is not None and args.trace:
        (out / "trace.jsonl").write_text("".join(json.dumps(t) + "\n" for t in trace))
        files["trace.jsonl"] = sha256_file(out / "trace.jsonl")
    b = bounds_for(inst)
    man.finish({"makespan": schedule.makespan, "lower_bound": b.lower,
                "gap_pct": round(100 * (schedule.makespan - b.lower) / b.lower, 4), "files": files})
    man.write(out)
    print(f"makespan: {schedule.makespan}")
    return EXIT_OK


def cmd_train(args, argv) -> int:
    try:
        inst, where = resolve_instance(args.instance, args.format)
    except (OSError, InstanceError) as exc:
        return _fail(EXIT_PARSE, str(exc))
    try:
        env_cfg, tr_cfg, osm_cfg = build_configs(args)
        if args.osm_level is not None:
            osm_cfg = _build(OsmConfig, {"tau": tau_for_swap_level(args.osm_level, inst, tr_cfg.total_steps), "enabled": True})
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    out = _out_dir(args)
    if args.resume:
        try:
            trainer = Trainer.load(args.resume)
        except (OSError, ValueError, KeyError) as exc:
            return _fail(EXIT_CONFIG, f"cannot resume: {exc}")
        env_cfg, tr_cfg, osm_cfg = trainer.env_config, trainer.config, trainer.osm_config
    else:
        trainer = Trainer(inst, env_cfg, tr_cfg, osm_cfg)
    man = _manifest(args, argv, [where], {"env": asdict(env_cfg), "trainer": asdict(tr_cfg), "osm": asdict(osm_cfg)})
    ckpt = out / "checkpoint.npz"

    def periodic(tr: Trainer) -> None:
        if args.checkpoint_every and tr.updates % args.checkpoint_every == 0:
            tr.save(ckpt)

    code = EXIT_OK
    try:
        trainer.run(stop_at=args.stop_after, callback=periodic)
    except TrainingDiverged as exc:
        print(f"error: training aborted: {exc} {exc.diagnostics}", file=sys.stderr)
        code = EXIT_DIVERGED
    trainer.save(ckpt)
    trainer.write_log(out / "train_log.csv")
    files = {"train_log.csv": sha256_file(out / "train_log.csv")}
    if trainer.best_schedule is not None:
        (out / "best_schedule.json").write_text(trainer.best_schedule.to_json() + "\n")
        files["best_schedule.json"] = sha256_file(out / "best_schedule.json")
    summary = {
        "steps": trainer.step,
        "episodes": trainer.episode,
        "best_makespan": trainer.best_makespan,
        "osm_tau": osm_cfg.tau if osm_cfg.enabled else None,
        "params_sha256": _params_digest(trainer.params),
        "files": files,
        "aborted": code == EXIT_DIVERGED,
    }
    if trainer.best_makespan is not None:
        b = bounds_for(inst)
        summary["lower_bound"] = b.lower
        summary["gap_pct"] = round(100 * (trainer.best_makespan - b.lower) / b.lower, 4)
    man.finish(summary)
    man.write(out)
    print(f"best makespan: {trainer.best_makespan} after {trainer.step} steps, {trainer.episode} episodes")
    return code


def cmd_evaluate(args, argv) -> int:
    try:
        params = load_params(args.checkpoint)
    except OSError as exc:
        return _fail(EXIT_CONFIG, f"cannot read checkpoint: {exc}")
    out = _out_dir(args)
    results, paths = {}, []
    for source in args.instances:
        try:
            inst, where = resolve_instance(source, args.format)
        except (OSError, InstanceError) as exc:
            return _fail(EXIT_PARSE, str(exc))
        try:
            res = evaluate(params, inst, args.episodes, args.mode, seed=args.seed)
        except ShapeMismatch as exc:
            return _fail(EXIT_CONFIG, str(exc))
        paths.append(where)
        (out / f"schedule_{inst.name}.json").write_text(res.schedule.to_json() + "\n")
        results[inst.name] = {"best": res.best_makespan, "mean": res.mean_makespan}
        print(f"{inst.name}: best {res.best_makespan} mean {res.mean_makespan:.1f} ({res.mode})")
    man = _manifest(args, argv, paths, {"checkpoint": args.checkpoint, "mode": args.mode, "episodes": args.episodes})
    man.finish({"makespans": results, "mode": args.mode})
    man.write(out)
    return EXIT_OK


def _parse_checkpoints(items: list[str]) -> list[tuple[str, str]]:
    out = []
    for item in items:
        name, _, path = item.partition("=")
        if not path:
            name, path = Path(item).parent.name or Path(item).stem, item
        out.append((name, path))
    return out


def cmd_compare(args, argv) -> int:
    rules = [r.strip() for r in args.rule.split(",") if r.strip()] if args.rule else []
    try:
        rule_objs = [Rule.parse(r, seed=args.seed) for r in rules]
    except ValueError as exc:
        return _fail(EXIT_CONFIG, f"unknown rule: {exc}")
    ckpts = _parse_checkpoints(args.checkpoint or [])
    policies: dict[str, PolicyParams | None] = {}
    for name, path in ckpts:
        try:
            policies[name] = load_params(path)
        except OSError:
            policies[name] = None
    reference = published_makespans(args.reference) if args.reference else {}
    ref_methods = sorted({m for v in reference.values() for m in v}) if reference else []
    methods = [r.kind.value for r in rule_objs] + [n for n, _ in ckpts] + [f"pub_{m}" for m in ref_methods]
    rows, paths = [], []
    missing = False
    for source in args.instances:
        try:
            inst, where = resolve_instance(source, args.format)
        except (OSError, InstanceError):
            rows.append(ComparisonRow(Path(source).stem, "?", {m: ABSENT for m in methods}))
            missing = True
            continue
        paths.append(where)
        b = bounds_for(inst)
        row = ComparisonRow(inst.name, f"{inst.n_jobs}x{inst.n_machines}", {}, b.lower, b.source.value)
        for rule in rule_objs:
            row.makespans[rule.kind.value] = dispatch(inst, rule).makespan
        for name, _ in ckpts:
            params = policies[name]
            if params is None:
                row.makespans[name] = ABSENT
                missing = True
                continue
            try:
                row.makespans[name] = evaluate(params, inst, args.episodes, args.mode, seed=args.seed).best_makespan
            except ShapeMismatch:
                row.makespans[name] = "n/a"
        for m in ref_methods:
            v = reference.get(inst.name.lower(), {}).get(m)
            if v is not None:
                row.makespans[f"pub_{m}"] = v
        rows.append(row)
    out = _out_dir(args)
    text, table_csv = to_text(rows, methods), to_csv(rows, methods)
    (out / "comparison.txt").write_text(text)
    (out / "comparison.csv").write_text(table_csv)
    sys.stdout.write(text)
    man = _manifest(args, argv, paths, {"rules": rules, "checkpoints": dict(ckpts), "mode": args.mode,
                                        "episodes": args.episodes, "reference": args.reference})
    man.finish({"rows": len(rows), "absent": missing, "files": {"comparison.csv": sha256_file(out / "comparison.csv")}})
    man.write(out)
    return EXIT_PARSE if missing else EXIT_OK


def cmd_perturb(args, argv) -> int:
    try:
        inst, where = resolve_instance(args.instance, args.format)
    except (OSError, InstanceError) as exc:
        return _fail(EXIT_PARSE, str(exc))
    if args.swaps is not None:
        k = args.swaps
    elif args.tau is not None and args.tp is not None:
        k = swap_count(OsmState(inst, args.tp), OsmConfig(args.tau, True), inst)
    else:
        return _fail(EXIT_CONFIG, "give --swaps or both --tau and --tp")
    if k < 0:
        return _fail(EXIT_CONFIG, "swap count must be >= 0")
    swaps = sample_swaps(inst, k, args.seed)
    new = apply_swaps(inst, swaps)
    out = _out_dir(args)
    (out / "perturbed.txt").write_text(serialize_standard(new))
    diff = [f"job {j}: positions {a} <-> {b}" for j, a, b in swaps]
    (out / "swaps.txt").write_text("".join(d + "\n" for d in diff))
    man = _manifest(args, argv, [where], {"swaps": args.swaps, "tau": args.tau, "tp": args.tp})
    man.finish({"swap_count": k, "files": {"perturbed.txt": sha256_file(out / "perturbed.txt")}})
    man.write(out)
    print(f"swaps: {k}")
    for d in diff:
        print(d)
    return EXIT_OK


def cmd_replay(args, argv) -> int:
    man = RunManifest.read(args.manifest)
    replay_argv = list(man.argv)
    if "--out" in replay_argv:
        i = replay_argv.index("--out")
        replay_argv[i + 1] = args.out
    else:
        replay_argv += ["--out", args.out]
    code = main(replay_argv)
    again = RunManifest.read(Path(args.out))
    if again.result != man.result:
        print("replay: MISMATCH", file=sys.stderr)
        print(json.dumps({"recorded": man.result, "replayed": again.result}, indent=1), file=sys.stderr)
        return EXIT_REPLAY
    print("replay: identical")
    return code


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--format", choices=[f.value for f in Format], default=None,
                        help="instance file layout (default: .tai files are taillard, others std)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default="runs/latest", help="output directory")
    common.add_argument("--config", default=None, help="key=value overrides for env/trainer/osm settings")

    p = argparse.ArgumentParser(prog="jobshop-rl", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("parse", parents=[common], help="validate an instance file")
    s.add_argument("instance")
    s.add_argument("--to", choices=["std", "taillard"], help="also print the instance in this layout")

    s = sub.add_parser("solve", parents=[common], help="schedule one instance with a rule or a policy")
    s.add_argument("instance")
    s.add_argument("--rule", help="|".join(k.value for k in RuleKind))
    s.add_argument("--checkpoint")
    s.add_argument("--mode", choices=["greedy", "sample"], default="greedy")
    s.add_argument("--episodes", type=int, default=1)
    s.add_argument("--trace", action="store_true", help="write per-step clock/mask/action/reward")

    s = sub.add_parser("train", parents=[common], help="train a PPO policy")
    s.add_argument("instance")
    s.add_argument("--steps", type=int, default=None)
    s.add_argument("--osm", choices=["on", "off"], default=None)
    s.add_argument("--osm-tau", type=float, default=None)
    s.add_argument("--osm-level", type=float, default=None,
                   help="pick tau so that swaps reach this fraction of all operations by the end of training")
    s.add_argument("--rollout-budget", type=int, default=None)
    s.add_argument("--occupancy-threshold", type=float, default=None)
    s.add_argument("--resume", default=None, help="continue from a checkpoint")
    s.add_argument("--checkpoint-every", type=int, default=100, help="updates between checkpoint writes")
    s.add_argument("--stop-after", type=int, default=None,
                   help="pause at the first update boundary at or after this step; continue with --resume")

    s = sub.add_parser("evaluate", parents=[common], help="evaluate a checkpoint on instances")
    s.add_argument("instances", nargs="+")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--mode", choices=["greedy", "sample"], default="greedy")
    s.add_argument("--episodes", type=int, default=1)

    s = sub.add_parser("compare", parents=[common], help="comparison table across instances and methods")
    s.add_argument("instances", nargs="+")
    s.add_argument("--rule", default=None, help="comma-separated rules, e.g. spt,mwkr")
    s.add_argument("--checkpoint", action="append", help="NAME=PATH, repeatable")
    s.add_argument("--mode", choices=["greedy", "sample"], default="greedy")
    s.add_argument("--episodes", type=int, default=1)
    s.add_argument("--reference", choices=["single", "transfer"], default=None,
                   help="add published makespans from this comparison as pub_* columns")

    s = sub.add_parser("perturb", parents=[common], help="write an order-swapped copy of an instance")
    s.add_argument("instance")
    s.add_argument("--swaps", type=int, default=None)
    s.add_argument("--tau", type=float, default=None)
    s.add_argument("--tp", type=int, default=None)

    s = sub.add_parser("replay", parents=[common], help="re-run a manifest and compare its result")
    s.add_argument("manifest")
    return p


COMMANDS = {
    "parse": cmd_parse,
    "solve": cmd_solve,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "compare": cmd_compare,
    "perturb": cmd_perturb,
    "replay": cmd_replay,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    return COMMANDS[args.cmd](args, argv)


if __name__ == "__main__":
    sys.exit(main())
