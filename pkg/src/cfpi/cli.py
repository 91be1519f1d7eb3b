"""Command-line pipeline: data generation, fitting, improvement, evaluation, reporting.

Every subcommand writes ``result.json``, ``log.csv`` and ``config.json`` into
``--out``. Result and log files hold no paths or timings, so two runs with the
same seed and config are byte-identical.

Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import io, presets
from .algos import Operator, fit_behavior, fit_critic, head_behavior, iterate, one_step, wrap
from .bc import load_policy_head, mean_nll, save_policy_head
from .checks import run_all
from .critics import kfold_validation_curve, load_pair, save_pair
from .data import read_dataset, write_dataset
from .envs import REGISTRY, UniformPolicy, generate_heterogeneous, make_env, rollout
from .errors import DataError, NumericalError
from .stats import aggregate

EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _rng(seed: int, stage: int = 0) -> np.random.Generator:
    """Independent stream per pipeline stage, all derived from --seed."""
    return np.random.default_rng(np.random.SeedSequence(seed).spawn(stage + 1)[stage])


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _overrides(args) -> dict:
    try:
        return presets.load_overrides(args.config)
    except FileNotFoundError as exc:
        raise DataError(f"config not found: {args.config}") from exc
    except (json.JSONDecodeError, ValueError) as exc:
        raise UsageError(f"bad config file {args.config}: {exc}") from exc


def _load_data(path):
    try:
        return read_dataset(path)
    except FileNotFoundError as exc:
        raise DataError(f"dataset not found: {path}") from exc


def _env_name(data) -> str:
    name = data.metadata.get("env")
    if name not in REGISTRY:
        raise DataError(f"dataset metadata names no known environment (got {name!r})")
    return name


def _configured(factory, env_name, overrides):
    try:
        return factory(env_name, **overrides)
    except (KeyError, TypeError) as exc:
        raise UsageError(f"bad config: {exc}") from exc


def _one_step_config(args, env_name):
    overrides = _overrides(args)
    overrides.setdefault("seed", args.seed)
    if getattr(args, "operator", None):
        overrides["operator"] = args.operator
    if getattr(args, "log_tau", None) is not None:
        overrides["log_tau"] = args.log_tau
    return _configured(presets.one_step_config, env_name, overrides)


def _finish(out: Path, result: dict, header: list[str], rows, config) -> None:
    io.write_json(out / "result.json", result)
    io.write_csv(out / "log.csv", header, rows)
    io.write_json(out / "config.json", config)


# ---------------------------------------------------------------- subcommands


def cmd_gen_data(args) -> int:
    overrides = {k: tuple(v) if isinstance(v, list) else v for k, v in _overrides(args).items()}
    try:
        env = make_env(args.env, **overrides)
    except (KeyError, TypeError) as exc:
        raise UsageError(str(exc)) from exc
    episodes = args.episodes or presets.EPISODES[args.env]
    data = generate_heterogeneous(env, env.dataset_policies(), episodes, _rng(args.seed), seed=args.seed)
    out = _out(args)
    write_dataset(data, out / "data.cfpi")
    meta = data.metadata
    rows = list(zip(meta["policies"], meta["episodes_per_policy"], meta["transitions_per_policy"]))
    result = {
        "env": args.env,
        "episodes": episodes,
        "transitions": len(data),
        "state_dim": data.state_dim,
        "action_dim": data.action_dim,
        "content_hash": data.content_hash(),
    }
    _finish(out, result, ["policy", "episodes", "transitions"], rows, {"env": args.env, "env_overrides": overrides, "episodes": episodes, "seed": args.seed})
    return 0


def cmd_bc(args) -> int:
    data = _load_data(args.data)
    cfg = _one_step_config(args, _env_name(data))
    head, log = fit_behavior(data, cfg, _rng(args.seed, 1))
    out = _out(args)
    save_policy_head(head, out / "behavior.mlp", seed=args.seed)
    s, a = data.states.astype(np.float64), data.actions.astype(np.float64)
    result = {"components": head.n_components, "final_nll": mean_nll(head, s, a), "steps": cfg.bc.steps}
    _finish(out, result, ["step", "nll"], log, presets.to_dict(cfg))
    return 0


def _critic_manifest(args, cfg, data) -> dict:
    return {"seed": args.seed, "gamma": cfg.gamma, "steps": cfg.steps, "dataset_hash": data.content_hash()}


def cmd_sarsa(args) -> int:
    data = _load_data(args.data)
    cfg = _one_step_config(args, _env_name(data))
    pair, log = fit_critic(data, cfg.critic, _rng(args.seed, 2))
    out = _out(args)
    save_pair(pair, out / "critic", **_critic_manifest(args, cfg.critic, data))
    s, a = data.states.astype(np.float64), data.actions.astype(np.float64)
    q = pair.q(s, a)
    result = {"steps": cfg.critic.steps, "gamma": cfg.critic.gamma, "q_mean": float(q.mean()), "q_std": float(q.std())}
    _finish(out, result, ["step", "loss_1", "loss_2"], log, presets.to_dict(cfg))
    return 0


def cmd_validate_q(args) -> int:
    data = _load_data(args.data)
    cfg = _configured(presets.validation_config, _env_name(data), _overrides(args))
    curve = kfold_validation_curve(
        data, cfg.split_ratio, list(cfg.checkpoints), _rng(args.seed, 3), cfg.critic, reference_steps=cfg.reference_steps
    )
    steps = [c[0] for c in curve]
    losses = [c[1] for c in curve]
    best = int(np.argmin(losses))
    result = {
        "checkpoints": steps,
        "losses": losses,
        "best_step": steps[best],
        "overfit_detected": best < len(steps) - 1,
    }
    _finish(_out(args), result, ["step", "val_loss"], curve, presets.to_dict(cfg))
    return 0


def _policy_doc(out: Path, **fields) -> dict:
    """policy.json stores checkpoint paths relative to its own directory."""
    for key in ("behavior", "critic"):
        if fields.get(key) is not None:
            fields[key] = os.path.relpath(Path(fields[key]).resolve(), out.resolve())
    return fields


def _summarize(policy, data, n: int = 512):
    s = data.states[:n].astype(np.float64)
    base = np.clip(policy.behavior(s).mean(), policy.low, policy.high)
    acts = policy.act_batch(s)
    q_base, q_new = policy.critic.q(s, base), policy.critic.q(s, acts)
    shift = np.linalg.norm(acts - base, axis=1)
    rows = [(i, float(q_base[i]), float(q_new[i]), float(shift[i])) for i in range(min(64, len(s)))]
    summary = {
        "states": len(s),
        "mean_q_behavior_mean": float(q_base.mean()),
        "mean_q_improved": float(q_new.mean()),
        "mean_shift": float(shift.mean()),
    }
    return summary, rows


def cmd_improve(args) -> int:
    data = _load_data(args.data)
    env_name = _env_name(data)
    cfg = _one_step_config(args, env_name)
    env = make_env(env_name)
    out = _out(args)
    behavior = load_policy_head(args.behavior) if args.behavior else None
    critic = load_pair(args.critic) if args.critic else None
    if behavior is not None and cfg.operator.single_gaussian and behavior.n_components != 1:
        raise DataError("the single-Gaussian operator needs a one-component behavior checkpoint")
    res = one_step(data, cfg, _rng(args.seed, 4), env.low, env.high, behavior, critic)
    behavior_path = args.behavior or out / "behavior.mlp"
    critic_path = args.critic or out / "critic"
    if args.behavior is None:
        save_policy_head(res.behavior, behavior_path, seed=args.seed)
    if args.critic is None:
        save_pair(res.critic, critic_path, **_critic_manifest(args, cfg.critic, data))
    doc = _policy_doc(
        out, kind="one_step", env=env_name, operator=cfg.operator.value, log_tau=cfg.log_tau, xi=cfg.xi,
        n_bcq=cfg.bcq_candidates, det_delta=cfg.det_delta, det_samples=cfg.det_samples, seed=cfg.seed,
        behavior=behavior_path, critic=critic_path,
    )
    io.write_json(out / "policy.json", doc)
    summary, rows = _summarize(res.policy, data)
    result = {"env": env_name, "operator": cfg.operator.value, "log_tau": cfg.log_tau, **summary}
    _finish(out, result, ["state", "q_behavior_mean", "q_improved", "shift"], rows, presets.to_dict(cfg))
    return 0


def cmd_iterate(args) -> int:
    data = _load_data(args.data)
    env_name = _env_name(data)
    overrides = _overrides(args)
    if args.log_tau is not None:
        overrides["log_tau"] = args.log_tau
    cfg = _configured(presets.iterative_config, env_name, overrides)
    out = _out(args)
    if args.behavior:
        head = load_policy_head(args.behavior)
        behavior_path = args.behavior
    else:
        head, _ = fit_behavior(data, presets.one_step_config(env_name, seed=args.seed), _rng(args.seed, 1))
        behavior_path = out / "behavior.mlp"
        save_policy_head(head, behavior_path, seed=args.seed)
    res = iterate(data, head_behavior(head), cfg, _rng(args.seed, 5))
    save_pair(res.critic, out / "critic", **_critic_manifest(args, cfg, data))
    doc = _policy_doc(
        out, kind="iterative", env=env_name, operator=Operator.MG.value, log_tau=cfg.log_tau, xi=0.05,
        n_bcq=5, det_delta=0.1, det_samples=50, seed=args.seed, behavior=behavior_path, critic=out / "critic",
    )
    io.write_json(out / "policy.json", doc)
    summary, _ = _summarize(res.policy, data)
    result = {"env": env_name, "steps": cfg.steps, "log_tau": cfg.log_tau, **summary}
    _finish(out, result, ["step", "loss_1", "loss_2", "q_mean", "q_absmax"], res.log, presets.to_dict(cfg))
    return 0


def load_policy(path):
    """Rebuild an improved policy from policy.json; returns (policy, env name)."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise DataError(f"policy file not found: {path}") from exc
    base = path.parent
    head = load_policy_head(base / doc["behavior"])
    critic = load_pair(base / doc["critic"])
    env = make_env(doc["env"])
    cfg = presets.one_step_config(
        doc["env"], operator=doc["operator"], log_tau=doc["log_tau"], xi=doc["xi"], n_bcq=doc["n_bcq"],
        det_delta=doc["det_delta"], det_samples=doc["det_samples"], seed=doc["seed"],
    )
    return wrap(head_behavior(head), critic, cfg, env.low, env.high), doc["env"]


def cmd_eval(args) -> int:
    if args.policy in ("expert", "random"):
        if not args.env:
            raise UsageError("eval of a reference policy needs --env")
        env_name = args.env
        env = make_env(env_name)
        policy = env.expert_policy() if args.policy == "expert" else UniformPolicy(env.low, env.high)
        label = args.policy
    else:
        policy, env_name = load_policy(args.policy)
        env = make_env(env_name)
        label = f"{policy.operator.value}@{policy.log_tau:g}"
    episodes = args.episodes or 100
    raw, returns = rollout(env, policy, episodes, _rng(args.seed, 6))
    norm = np.array([env.normalized(r) for r in returns])
    if not np.all(np.isfinite(returns)):
        raise NumericalError("non-finite episode return")
    result = {
        "task": env_name,
        "policy": label,
        "seed": args.seed,
        "episodes": episodes,
        "raw_return": raw,
        "return_stderr": float(returns.std(ddof=1) / np.sqrt(episodes)) if episodes > 1 else 0.0,
        "normalized_score": float(norm.mean()),
    }
    rows = [(i, float(r), float(z)) for i, (r, z) in enumerate(zip(returns, norm))]
    _finish(_out(args), result, ["episode", "return", "normalized"], rows, {"episodes": episodes, "seed": args.seed})
    return 0


def _read_matrix(args) -> tuple[list[str], np.ndarray]:
    """Tasks x seeds matrix from eval result files or a long-format CSV (task, seed, score)."""
    cells: dict[str, dict[int, float]] = {}
    if args.matrix:
        try:
            records = [(r["task"], int(r["seed"]), float(r["score"])) for r in io.read_csv(args.matrix)]
        except FileNotFoundError as exc:
            raise DataError(f"matrix not found: {args.matrix}") from exc
        except (KeyError, ValueError) as exc:
            raise DataError(f"{args.matrix}: need columns task, seed, score ({exc})") from exc
    else:
        records = []
        for p in args.inputs:
            try:
                doc = json.loads(Path(p).read_text())
                records.append((doc["task"], int(doc["seed"]), float(doc["normalized_score"])))
            except FileNotFoundError as exc:
                raise DataError(f"result not found: {p}") from exc
            except (KeyError, ValueError) as exc:
                raise DataError(f"{p} is not an eval result") from exc
    for task, seed, score in records:
        if seed in cells.setdefault(task, {}):
            raise DataError(f"duplicate entry for task {task!r} seed {seed}")
        cells[task][seed] = score
    if not cells:
        raise DataError("no scores to aggregate")
    tasks = sorted(cells)
    seeds = sorted(cells[tasks[0]])
    for t in tasks:
        if sorted(cells[t]) != seeds:
            raise DataError(f"run matrix is not rectangular: task {t!r} has seeds {sorted(cells[t])}")
    return tasks, np.array([[cells[t][s] for s in seeds] for t in tasks])


def cmd_report(args) -> int:
    if not args.matrix and not args.inputs:
        raise UsageError("report needs --matrix or --inputs")
    tasks, m = _read_matrix(args)
    rep = aggregate(m, b=args.bootstrap, rng=_rng(args.seed, 7))
    out = _out(args)
    names = ["median", "iqm", "mean", "optimality_gap"]
    io.write_csv(
        out / "aggregates.csv", ["statistic", "point", "ci_low", "ci_high"],
        [(k, rep.estimates[k].point, rep.estimates[k].low, rep.estimates[k].high) for k in names],
    )
    profile = list(zip(rep.thresholds.tolist(), rep.profile.tolist(), rep.profile_low.tolist(), rep.profile_high.tolist()))
    io.write_csv(out / "profile.csv", ["eta", "fraction", "band_low", "band_high"], profile)
    result = {
        "tasks": tasks,
        "seeds": m.shape[1],
        **{k: {"point": rep.estimates[k].point, "low": rep.estimates[k].low, "high": rep.estimates[k].high} for k in names},
    }
    _finish(out, result, ["eta", "fraction", "band_low", "band_high"], profile, {"bootstrap": args.bootstrap, "seed": args.seed})
    return 0


def cmd_oracle_check(args) -> int:
    suites = run_all(args.instances, args.seed)
    rows = [(s.name, s.instances, s.worst, s.tolerance, "pass" if s.passed else "FAIL") for s in suites]
    result = {
        "passed": all(s.passed for s in suites),
        "suites": {s.name: {"instances": s.instances, "worst": s.worst, "tolerance": s.tolerance, "passed": s.passed} for s in suites},
    }
    _finish(_out(args), result, ["suite", "instances", "worst", "tolerance", "status"], rows, {"instances": args.instances, "seed": args.seed})
    for r in rows:
        print(f"{r[0]:<20} {r[4]:<4}  worst={r[2]:.3e}  tol={r[3]:.0e}  n={r[1]}")
    return 0 if result["passed"] else EXIT_NUMERICAL


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cfpi", description="Closed-form offline policy improvement toolkit.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, data=False):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--config", help="JSON file of config overrides")
        sp.add_argument("--out", required=True, help="output directory")
        if data:
            sp.add_argument("--data", required=True, help="dataset file from gen-data")

    sp = sub.add_parser("gen-data", help="generate a heterogeneous offline dataset")
    common(sp)
    sp.add_argument("--env", required=True, choices=sorted(REGISTRY))
    sp.add_argument("--episodes", type=int)
    sp.set_defaults(fn=cmd_gen_data)

    sp = sub.add_parser("bc", help="fit a Gaussian mixture behavior policy")
    common(sp, data=True)
    sp.add_argument("--operator", choices=[o.value for o in Operator], help="sg fits one component")
    sp.set_defaults(fn=cmd_bc)

    sp = sub.add_parser("sarsa", help="fit the SARSA quantile critic pair")
    common(sp, data=True)
    sp.set_defaults(fn=cmd_sarsa)

    sp = sub.add_parser("validate-q", help="held-out critic loss curve")
    common(sp, data=True)
    sp.set_defaults(fn=cmd_validate_q)

    sp = sub.add_parser("improve", help="one-step policy improvement")
    common(sp, data=True)
    sp.add_argument("--operator", choices=[o.value for o in Operator])
    sp.add_argument("--log-tau", type=float)
    sp.add_argument("--behavior", help="behavior checkpoint from bc")
    sp.add_argument("--critic", help="critic directory from sarsa")
    sp.set_defaults(fn=cmd_improve)

    sp = sub.add_parser("iterate", help="iterative training with the mixture operator")
    common(sp, data=True)
    sp.add_argument("--log-tau", type=float)
    sp.add_argument("--behavior", help="behavior checkpoint from bc")
    sp.set_defaults(fn=cmd_iterate)

    sp = sub.add_parser("eval", help="roll out a policy")
    common(sp)
    sp.add_argument("--policy", required=True, help="policy.json, or 'expert' / 'random' with --env")
    sp.add_argument("--env", choices=sorted(REGISTRY))
    sp.add_argument("--episodes", type=int)
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("report", help="aggregate eval results with bootstrap intervals")
    common(sp)
    sp.add_argument("--inputs", nargs="*", default=[], help="eval result.json files")
    sp.add_argument("--matrix", help="CSV with columns task, seed, score")
    sp.add_argument("--bootstrap", type=int, default=2000)
    sp.set_defaults(fn=cmd_report)

    sp = sub.add_parser("oracle-check", help="compare closed forms against numerical oracles")
    common(sp)
    sp.add_argument("--instances", type=int, default=1000)
    sp.set_defaults(fn=cmd_oracle_check)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "episodes", None) is not None and args.episodes < 1:
            raise UsageError("--episodes must be >= 1")
        if getattr(args, "log_tau", None) is not None and args.log_tau < 0:
            raise UsageError("--log-tau must be >= 0")
        return args.fn(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
