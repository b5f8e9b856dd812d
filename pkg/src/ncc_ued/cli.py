"""Command-line entry point.

    ncc-ued train --config exp.ini --out runs/reg
    ncc-ued eval --checkpoint runs/reg/seed_0/policy.txt --levels heldout.txt
    ncc-ued cvar --checkpoint ... --levels ... --alphas 10,50,100
    ncc-ued constants --config exp.ini
    ncc-ued project-test --points 1000
    ncc-ued compare runs/reg runs/dr

Exit codes: 0 success, 2 configuration error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .adversary import project_truncated_simplex, save_adversary
from .analysis import projection_oracle, report_for
from .baselines import train_baseline
from .buffer import save_buffer
from .config import METHODS, ConfigError, ExperimentConfig, dump_config, load_config
from .env import read_levels, sample_level_uniform, write_levels
from .evaluation import DEFAULT_ALPHAS, cvar_eval, evaluate, heldout_levels, normal_ci
from .policy import PolicyParams, load_policy, save_policy
from .trainer import LOG_COLUMNS, SCORE_COLUMNS, NumericalAbort, train, write_csv

EXIT_OK, EXIT_CONFIG, EXIT_ABORT = 0, 2, 3
EVAL_COLUMNS = ("method", "seed", "level_id", "mean_return", "solve_rate")
CVAR_COLUMNS = ("method", "seed", "alpha", "cvar")
SUMMARY_COLUMNS = ("method", "seed", "status", "train_return", "heldout_return", "heldout_solve_rate", "cvar10")


def _say(args, msg: str) -> None:
    if not getattr(args, "quiet", False):
        print(msg, flush=True)


def _resolve(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.method:
        if args.method not in METHODS:
            raise ConfigError(f"--method: unknown method {args.method!r}; expected one of {sorted(METHODS)}")
        cfg = replace(cfg, method=args.method, sampler=replace(cfg.sampler, kind=args.method)
                      if args.method in ("DR", "PLR", "SFL") else cfg.sampler)
    if args.seed_override is not None:
        cfg = replace(cfg, run=replace(cfg.run, seeds=(args.seed_override,)))
    if cfg.is_ncc:
        try:
            cfg.train_config(cfg.run.seeds[0]).validate()
        except ValueError as exc:
            raise ConfigError(f"invalid configuration: {exc}") from exc
    return cfg


def run_seed(cfg: ExperimentConfig, seed: int, out: Path) -> dict:
    """Train one seed, evaluate on the shared held-out set and write its artifacts."""
    out.mkdir(parents=True, exist_ok=True)
    tc = cfg.train_config(seed)
    row = {"method": cfg.method, "seed": seed, "status": "ok"}
    train_ids = ()
    try:
        if cfg.is_ncc:
            state = train(tc)
            params, log = state.best_params if tc.track_best else state.params, state.log
            train_ids = state.buffer.ids
            save_buffer(out / "buffer.txt", state.buffer, state.adversary.y)
            save_adversary(out / "adversary.txt", state.adversary)
            write_csv(out / "scores.csv", state.score_log, SCORE_COLUMNS)
        else:
            res = train_baseline(tc, cfg.sampler)
            params, log = res.params, res.log
            if res.buffer is not None:
                train_ids = res.buffer.ids
                save_buffer(out / "buffer.txt", res.buffer)
    except NumericalAbort as exc:
        save_policy(out / "policy_abort.txt", exc.state.params)
        save_adversary(out / "adversary_abort.txt", exc.state.adversary)
        write_csv(out / "train_log.csv", exc.state.log, LOG_COLUMNS, {"method": cfg.method, "seed": seed})
        (out / "FAILED").write_text(f"{exc}\n")
        return dict(row, status="aborted", train_return="", heldout_return="", heldout_solve_rate="", cvar10="")
    save_policy(out / "policy.txt", params)
    write_csv(out / "train_log.csv", log, LOG_COLUMNS, {"method": cfg.method, "seed": seed})
    heldout = heldout_levels(cfg.space, cfg.run.eval_levels, cfg.run.eval_seed)
    rng = np.random.default_rng([cfg.run.eval_seed, seed])
    rep = evaluate(params, heldout, cfg.run.eval_episodes, cfg.gamma, rng, train_ids, cfg.method, seed)
    cv = cvar_eval(params, heldout, cfg.run.cvar_alphas, cfg.run.eval_episodes, cfg.gamma, rng,
                   method=cfg.method, seed=seed)
    write_csv(out / "eval.csv", rep.rows(), EVAL_COLUMNS)
    write_csv(out / "cvar.csv", cv.cvar_rows(), CVAR_COLUMNS)
    cvar10 = cv.cvar.get(10.0, "")
    return dict(row, train_return=log[-1]["mean_return"] if log else "", heldout_return=rep.aggregate_return,
                heldout_solve_rate=rep.aggregate_solve_rate, cvar10=cvar10)


def _job(payload):
    cfg, seed, out = payload
    return run_seed(cfg, seed, Path(out))


def cmd_train(args) -> int:
    cfg = _resolve(args)
    out = Path(args.out or "runs") / cfg.method
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.ini").write_text(dump_config(cfg))
    if cfg.analysis.constants and cfg.is_ncc:
        rng = np.random.default_rng(cfg.run.seeds[0])
        levels = [sample_level_uniform(cfg.space, rng) for _ in range(2)]
        params = PolicyParams.for_level(levels[0], cfg.train.zeta, cfg.train.weight_bound)
        rep = report_for(levels, params, cfg.train.xi, cfg.train.alpha, epsilon=cfg.analysis.epsilon)
        rep = replace(rep, n_levels=cfg.train.buffer_size)
        (out / "constants.csv").write_text(rep.to_csv())
    jobs = [(cfg, s, str(out / f"seed_{s}")) for s in cfg.run.seeds]
    started = time.time()
    if cfg.run.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.run.workers) as pool:
            rows = list(pool.map(_job, jobs))
    else:
        rows = [_job(j) for j in jobs]
    write_csv(out / "summary.csv", rows, SUMMARY_COLUMNS)
    status = "aborted" if any(r["status"] != "ok" for r in rows) else "ok"
    (out / "status.txt").write_text(f"status = {status}\nseeds = {len(rows)}\n")
    for r in rows:
        _say(args, f"{r['method']} seed {r['seed']}: {r['status']} heldout solve rate {r['heldout_solve_rate']}")
    _say(args, f"wrote {out} in {time.time() - started:.1f}s")
    return EXIT_ABORT if status != "ok" else EXIT_OK


def cmd_eval(args) -> int:
    params = load_policy(args.checkpoint)
    levels = read_levels(args.levels)
    rep = evaluate(params, levels, args.episodes, args.gamma, np.random.default_rng(args.seed),
                   method=args.method or "", seed=args.seed)
    if args.out:
        write_csv(args.out, rep.rows(), EVAL_COLUMNS)
    _say(args, f"levels {len(levels)}  mean return {rep.aggregate_return:.4f}  solve rate {rep.aggregate_solve_rate:.4f}")
    return EXIT_OK


def cmd_cvar(args) -> int:
    params = load_policy(args.checkpoint)
    levels = read_levels(args.levels)
    alphas = tuple(float(a) for a in args.alphas.split(",")) if args.alphas else DEFAULT_ALPHAS
    rep = cvar_eval(params, levels, alphas, args.episodes, args.gamma, np.random.default_rng(args.seed),
                    rank_by=args.rank_by, method=args.method or "", seed=args.seed)
    if args.out:
        write_csv(args.out, rep.cvar_rows(), CVAR_COLUMNS)
    for a, v in rep.cvar.items():
        _say(args, f"CVaR({a:g}%) = {v:.4f}")
    return EXIT_OK


def cmd_constants(args) -> int:
    cfg = _resolve(args)
    rng = np.random.default_rng(cfg.run.seeds[0])
    n = cfg.train.buffer_size
    levels = [sample_level_uniform(cfg.space, rng) for _ in range(n)]
    params = PolicyParams.for_level(levels[0], cfg.train.zeta, cfg.train.weight_bound)
    rep = report_for(levels, params, cfg.train.xi, cfg.train.alpha, epsilon=cfg.analysis.epsilon)
    print(rep.to_text())
    print()
    print(rep.to_csv(), end="")
    if args.out:
        Path(args.out).write_text(rep.to_csv())
    return EXIT_OK


def cmd_project_test(args) -> int:
    rng = np.random.default_rng(args.seed)
    worst = 0.0
    for _ in range(args.points):
        d = int(rng.integers(1, 65))
        xi = float(rng.choice([0.0, 1e-6, 0.01]))
        if xi * d > 1:
            xi = 0.0
        v = rng.normal(0, float(rng.choice([0.1, 1.0, 10.0])), d)
        worst = max(worst, float(np.abs(project_truncated_simplex(v, xi) - projection_oracle(v, xi)).max()))
    ok = worst <= 1e-8
    _say(args, f"{args.points} points, max |P(v) - oracle(v)| = {worst:.3e}: {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else 1


def cmd_compare(args) -> int:
    by_method: dict[str, list] = {}
    for d in args.dirs:
        path = Path(d) / "summary.csv" if Path(d).is_dir() else Path(d)
        with open(path, newline="") as fh:
            for r in csv.DictReader(fh):
                if r["status"] == "ok":
                    by_method.setdefault(r["method"], []).append(r)
    rows = []
    for method, rs in sorted(by_method.items()):
        row = {"method": method, "seeds": len(rs)}
        for col in ("heldout_solve_rate", "heldout_return", "cvar10"):
            m, lo, hi = normal_ci([float(r[col]) for r in rs])
            row[col] = m
            row[col + "_lo"], row[col + "_hi"] = lo, hi
        rows.append(row)
    cols = ("method", "seeds", "heldout_solve_rate", "heldout_solve_rate_lo", "heldout_solve_rate_hi",
            "heldout_return", "heldout_return_lo", "heldout_return_hi", "cvar10", "cvar10_lo", "cvar10_hi")
    if args.out:
        write_csv(args.out, rows, cols)
    for r in rows:
        _say(args, f"{r['method']:<10} n={r['seeds']:<3} solve {r['heldout_solve_rate']:.3f} "
                   f"[{r['heldout_solve_rate_lo']:.3f}, {r['heldout_solve_rate_hi']:.3f}]  cvar10 {r['cvar10']:.3f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment INI file")
    common.add_argument("--seed-override", type=int, help="run this single seed instead of the configured list")
    common.add_argument("--out", help="output directory (train) or CSV path")
    common.add_argument("--method", help="override the configured method name")
    common.add_argument("--quiet", action="store_true")
    policy_io = argparse.ArgumentParser(add_help=False)
    policy_io.add_argument("--checkpoint", required=True, help="policy file written by train")
    policy_io.add_argument("--levels", required=True, help="level file, one level per line")
    policy_io.add_argument("--episodes", type=int, default=10)
    policy_io.add_argument("--gamma", type=float, default=0.99)
    policy_io.add_argument("--seed", type=int, default=0)

    p = argparse.ArgumentParser(prog="ncc-ued", description="Min-max curriculum design experiments")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="train one method over the configured seeds").set_defaults(
        func=cmd_train)
    sub.add_parser("eval", parents=[common, policy_io], help="evaluate a checkpoint on a level file").set_defaults(
        func=cmd_eval)
    c = sub.add_parser("cvar", parents=[common, policy_io], help="CVaR curve of a checkpoint")
    c.add_argument("--alphas", help="comma separated percentages")
    c.add_argument("--rank-by", choices=("return", "solve_rate"), default="return")
    c.set_defaults(func=cmd_cvar)
    sub.add_parser("constants", parents=[common], help="print the convergence constants").set_defaults(
        func=cmd_constants)
    pt = sub.add_parser("project-test", parents=[common], help="projection vs active-set oracle battery")
    pt.add_argument("--points", type=int, default=1000)
    pt.add_argument("--seed", type=int, default=0)
    pt.set_defaults(func=cmd_project_test)
    cm = sub.add_parser("compare", parents=[common], help="summary table across run directories")
    cm.add_argument("dirs", nargs="+")
    cm.set_defaults(func=cmd_compare)
    lv = sub.add_parser("levels", parents=[common], help="write a held-out level file from the config")
    lv.add_argument("--count", type=int, default=100)
    lv.add_argument("--seed", type=int, default=12345)
    lv.set_defaults(func=cmd_levels)
    return p


def cmd_levels(args) -> int:
    cfg = _resolve(args)
    levels = heldout_levels(cfg.space, args.count, args.seed)
    write_levels(args.out or "levels.txt", levels)
    _say(args, f"wrote {len(levels)} levels to {args.out or 'levels.txt'}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
