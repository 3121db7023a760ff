"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import analysis, evolution
from .config import CONFIG_ECHO, RunConfig, dump_toml, load_config
from .envs import EnvConfigError, EnvSpec, scripted_baseline_return
from .evolution import ConfigError
from .loss_dsl import ALL_OPERATORS, ParseError, parse_candidate, search_space_size, validate
from .rl_core.train import train_run

logger = logging.getLogger("auxsearch")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _run_flags(p: argparse.ArgumentParser, steps: bool = True) -> None:
    p.add_argument("--config", help="flat TOML config file")
    p.add_argument("--seed", type=int, help="global seed")
    p.add_argument("--workers", type=int, help="parallel evaluation processes")
    p.add_argument("--out", help="output directory")
    p.add_argument("--env", help="environment id, e.g. pointmass-dense")
    if steps:
        p.add_argument("--steps", type=int, help="training steps per run (after warmup)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="auxsearch", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("search", help="run the evolutionary search")
    _run_flags(p)
    p.add_argument("--resume", metavar="DIR", help="continue the search logged in DIR")

    p = sub.add_parser("resume", help="continue an interrupted search")
    p.add_argument("dir")
    p.add_argument("--workers", type=int)

    p = sub.add_parser("train", help="train one candidate (or plain SAC) and print its curve")
    _run_flags(p)
    p.add_argument("--candidate", help="candidate in text form; omit for the no-auxiliary baseline")

    p = sub.add_parser("evaluate", help="return of a scripted policy")
    p.add_argument("--env", default="pointmass-dense")
    p.add_argument("--policy", choices=["controller", "random"], default="controller")
    p.add_argument("--episodes", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("prune-ops", help="rank the ten similarity operators")
    _run_flags(p)
    p.add_argument("--trials", type=int, default=3)

    p = sub.add_parser("cross-validate", help="score candidates across environments")
    _run_flags(p)
    p.add_argument("--candidate", action="append", required=True)
    p.add_argument("--cv-env", action="append", dest="cv_envs",
                   help="environment to include (repeatable; defaults to --env)")
    p.add_argument("--trials", type=int, default=1)

    p = sub.add_parser("analyze", help="pattern and cardinality statistics over a search log")
    p.add_argument("path", help="search directory or search.jsonl")
    p.add_argument("--env", help="env label when it cannot be read from the config echo")
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--out", help="directory for CSV output (default: <search dir>/analysis)")

    p = sub.add_parser("space-size", help="number of candidate losses")
    p.add_argument("--kmax", type=int, default=10)
    p.add_argument("--ops", type=int, default=len(ALL_OPERATORS))

    p = sub.add_parser("config", help="configuration helpers")
    csub = p.add_subparsers(dest="config_command", parser_class=_Parser, required=True)
    csub.add_parser("print-defaults")
    return parser


def _overrides(args) -> dict:
    mapping = {"seed": "seed", "workers": "workers", "out": "out", "env": "env", "steps": "budget"}
    return {key: getattr(args, flag) for flag, key in mapping.items()
            if getattr(args, flag, None) is not None}


def _echo(cfg: RunConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / CONFIG_ECHO).write_text(cfg.to_toml())


def _parse_candidate(text: str):
    c = parse_candidate(text)
    v = validate(c)
    if not v:
        raise ConfigError(f"candidate {text!r} is invalid: {v.value}")
    return c


def cmd_search(args) -> int:
    if args.resume:
        return _resume(Path(args.resume), args.workers)
    cfg = load_config(args.config, _overrides(args))
    out = Path(cfg.out)
    _echo(cfg, out)
    log = evolution.run_search(cfg.evolution, out_dir=out, rl_config=cfg.rl)
    best = log.best()
    print(f"best aulc {best.score:.4f} {best.candidate}")
    return 0


def _resume(directory: Path, workers: int | None) -> int:
    echo = directory / CONFIG_ECHO
    if not echo.exists():
        raise ConfigError(f"{directory} has no {CONFIG_ECHO} to resume from")
    overrides = {"out": str(directory)}
    if workers is not None:
        overrides["workers"] = workers
    cfg = load_config(echo, overrides)
    log = evolution.run_search(cfg.evolution, out_dir=directory, resume=True, rl_config=cfg.rl)
    best = log.best()
    print(f"best aulc {best.score:.4f} {best.candidate}")
    return 0


def cmd_resume(args) -> int:
    return _resume(Path(args.dir), args.workers)


def cmd_train(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    candidate = _parse_candidate(args.candidate) if args.candidate else None
    curve = train_run(candidate, cfg.evolution.env, cfg.evolution.budget, cfg.evolution.seed, cfg.rl)
    print(json.dumps({"candidate": None if candidate is None else str(candidate),
                      "env": cfg.evolution.env, "seed": cfg.evolution.seed,
                      "checkpoints": [[s, v] for s, v in curve.checkpoints],
                      "aulc": evolution.aulc(curve)}))
    return 0


def cmd_evaluate(args) -> int:
    EnvSpec.parse(args.env)
    ret = scripted_baseline_return(args.env, args.episodes, args.seed, args.policy)
    print(json.dumps({"env": args.env, "policy": args.policy, "episodes": args.episodes,
                      "seed": args.seed, "mean_return": ret}))
    return 0


def cmd_prune_ops(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    scores = evolution.prune_operators(cfg.evolution, args.trials,
                                       evolution.RLEvaluator(cfg.evolution.env, cfg.evolution.budget, cfg.rl))
    print(evolution.format_operator_table(scores))
    for s in scores:
        print(f"{s.operator.name:<14}{s.mean:>12.4f} ± {s.std:.4f}")
    return 0


def cmd_cross_validate(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    candidates = [_parse_candidate(t) for t in args.candidate]
    envs = args.cv_envs or [cfg.evolution.env]
    for e in envs:
        EnvSpec.parse(e)
    result = evolution.cross_validate(
        candidates, envs, args.trials,
        lambda env: evolution.RLEvaluator(env, cfg.evolution.budget, cfg.rl),
        global_seed=cfg.evolution.seed, workers=cfg.evolution.workers)
    print(json.dumps({"winner": str(result.winner), "winner_index": result.winner_index,
                      "envs": result.env_ids, "raw": result.raw.tolist(),
                      "normalized": result.normalized.tolist()}))
    return 0


def cmd_analyze(args) -> int:
    path = Path(args.path)
    records = analysis.load_search_log(path, args.env)
    out = Path(args.out) if args.out else (path if path.is_dir() else path.parent) / "analysis"
    out.mkdir(parents=True, exist_ok=True)
    reports = analysis.full_report(records)
    analysis.export_records_csv(records, out / "records.csv")
    analysis.export_reports_csv(reports, out / "effects.csv")
    edges, hist = analysis.histogram(records, args.bins)
    with open(out / "histogram.csv", "w") as f:
        f.write("bin_low,bin_high,percent\n")
        for lo, hi, pct in zip(edges[:-1], edges[1:], hist["all"]):
            f.write(f"{lo:.6g},{hi:.6g},{pct:.6g}\n")
    print(analysis.format_report(reports))
    return 0


def cmd_space_size(args) -> int:
    print(search_space_size(args.kmax, args.ops))
    return 0


def cmd_config(args) -> int:
    from .config import defaults

    sys.stdout.write(dump_toml(defaults()))
    return 0


COMMANDS = {
    "search": cmd_search,
    "resume": cmd_resume,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "prune-ops": cmd_prune_ops,
    "cross-validate": cmd_cross_validate,
    "analyze": cmd_analyze,
    "space-size": cmd_space_size,
    "config": cmd_config,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return 1
    except SystemExit as e:  # --help
        return 0 if e.code in (0, None) else 1
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ParseError, EnvConfigError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except Exception as e:
        logger.exception("run failed")
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
