"""``madlearn`` command line: collect, train, eval, plan, gt, sweep.

Configuration is flat ``key = value`` text with dotted section names
(``train.steps = 50000``); ``[section]`` headers prefix the keys below them.
Later sources win: built-in defaults, then ``--config`` files in order, then
``--set key=value`` flags and the shortcut flags. Every output directory gets a
``config.txt`` with the fully resolved configuration and a ``manifest.txt``,
which is the only file carrying a timestamp.

Exit codes: 0 success, 2 configuration error, 3 numeric failure, 4 I/O error.
"""
from __future__ import annotations

import argparse
import datetime
import logging
import os
import sys
from pathlib import Path

import numpy as np

from madlearn import __version__, dataset as ds_mod, diffnet, planner
from madlearn.environments import make_env, pointmaze_lite
from madlearn.evaluation import LearnedMetric, OracleMetric, evaluate, write_rows
from madlearn.quasimetric import QuasimetricSpec
from madlearn.training import MadDistConfig, NonFiniteLossError, TDMadDistConfig, train

log = logging.getLogger("madlearn")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

METRIC_COLUMNS = ("step", "L_o", "L_r", "L_c", "spearman", "pearson", "ratio_cv")
SUMMARY_COLUMNS = ("episodes", "successes", "success_rate", "mean_steps_success")


class ConfigError(ValueError):
    pass


def _train_defaults():
    out = {}
    for name, value in TDMadDistConfig().to_dict().items():
        out[f"train.{name}"] = value
    out["train.d_max"] = MadDistConfig.d_max
    out["train.algorithm"] = "maddist"
    return out


DEFAULTS = {
    "seed": "",
    "out": "madlearn-out",
    "env.name": "cliffwalking",
    "env.sigma": 0.1,
    "env.resolution": 1,
    "data.path": "",
    "data.n_trajectories": 100,
    "data.max_len": "auto",  # 200 for grid worlds, 500 for point mazes
    **_train_defaults(),
    "eval.checkpoint": "",
    "eval.metric": "learned",
    "eval.n_pairs": 100_000,
    "plan.checkpoint": "",
    "plan.metric": "learned",
    "plan.episodes": 50,
    "plan.n_candidates": 100,
    "plan.horizon": 10,
    "plan.max_episode_steps": 500,
    "plan.goal_tolerance": 0.5,
    "plan.oracle_resolution": 4,
    "sweep.key": "train.latent_dim",
    "sweep.values": "2,8,32,256",
}


# -- config text ---------------------------------------------------------------


def parse_config_text(text, source="<config>"):
    out = {}
    section = ""
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        out[f"{section}.{key}" if section else key] = value
    return out


def format_config(cfg):
    return "".join(f"{k} = {_str(cfg[k])}\n" for k in sorted(cfg))


def _str(v):
    if v is None:
        return "none"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def resolve_config(files=(), overrides=(), environ=None, base=None):
    """Merge defaults, ``base``, config files and ``key=value`` overrides into one dict."""
    environ = os.environ if environ is None else environ
    cfg = {k: _str(v) for k, v in DEFAULTS.items()}
    cfg.update(base or {})
    for path in files:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        cfg.update(parse_config_text(text, str(path)))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        cfg[k.strip()] = v.strip()
    unknown = sorted(set(cfg) - set(DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    if cfg["seed"] == "":
        if environ.get("MAD_SEED", "") == "":
            raise ConfigError("no seed given: use --seed, a 'seed' config key, or MAD_SEED")
        cfg["seed"] = environ["MAD_SEED"]
    seed = _int(cfg, "seed")
    if seed < 0:
        raise ConfigError("seed must be non-negative")
    if cfg["data.max_len"] == "auto":
        cfg["data.max_len"] = "500" if cfg["env.name"].startswith("pointmaze") else "200"
    return cfg


def _int(cfg, key):
    try:
        return int(cfg[key])
    except ValueError as exc:
        raise ConfigError(f"{key}: expected an integer, got {cfg[key]!r}") from exc


def _float(cfg, key):
    try:
        return float(cfg[key])
    except ValueError as exc:
        raise ConfigError(f"{key}: expected a number, got {cfg[key]!r}") from exc


# -- builders ------------------------------------------------------------------


def build_env(cfg):
    try:
        return make_env(
            cfg["env.name"], sigma=_float(cfg, "env.sigma"), resolution=_int(cfg, "env.resolution")
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def build_train_config(cfg):
    algo = cfg["train.algorithm"]
    if algo not in ("maddist", "tdmaddist"):
        raise ConfigError(f"train.algorithm must be maddist or tdmaddist, got {algo!r}")
    cls = TDMadDistConfig if algo == "tdmaddist" else MadDistConfig
    kwargs = {}
    template = cls()
    for name in cls.field_names():
        raw = cfg[f"train.{name}"]
        default = getattr(template, name)
        try:
            if name == "quasimetric":
                kwargs[name] = QuasimetricSpec.parse(raw)
            elif name == "hidden":
                kwargs[name] = tuple(int(h) for h in raw.split(",") if h.strip())
            elif name == "grad_clip":
                kwargs[name] = None if raw.lower() in ("none", "") else float(raw)
            elif isinstance(default, bool):
                kwargs[name] = raw.lower() in ("1", "true", "yes")
            elif isinstance(default, int):
                kwargs[name] = int(raw)
            else:
                kwargs[name] = float(raw)
        except ValueError as exc:
            raise ConfigError(f"train.{name}: {exc}") from exc
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def build_plan_config(cfg):
    try:
        return planner.PlanConfig(
            n_candidates=_int(cfg, "plan.n_candidates"),
            horizon=_int(cfg, "plan.horizon"),
            max_episode_steps=_int(cfg, "plan.max_episode_steps"),
            goal_tolerance=_float(cfg, "plan.goal_tolerance"),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _out_dir(cfg):
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_run_files(out, cfg, command, **facts):
    (out / "config.txt").write_text(format_config(cfg))
    lines = {
        "command": command,
        "version": __version__,
        "created": datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds"),
        **facts,
    }
    (out / "manifest.txt").write_text("".join(f"{k} = {v}\n" for k, v in lines.items()))


def _load_dataset(cfg, env):
    if cfg["data.path"]:
        data = ds_mod.load(cfg["data.path"])
        if data.obs_dim != env.obs_dim:
            raise ConfigError(
                f"dataset obs_dim {data.obs_dim} does not match {env.name} obs_dim {env.obs_dim}"
            )
        return data
    return ds_mod.collect(env, _int(cfg, "data.n_trajectories"), _int(cfg, "data.max_len"), _int(cfg, "seed"))


def _metric(cfg, env, section):
    """Learned metric from ``<section>.checkpoint`` or the ground-truth oracle."""
    kind = cfg[f"{section}.metric"]
    if kind == "oracle":
        if env.continuous:
            fine = pointmaze_lite(env.layout, resolution=_int(cfg, "plan.oracle_resolution"))
            return OracleMetric(fine)
        return OracleMetric(env)
    if kind != "learned":
        raise ConfigError(f"{section}.metric must be learned or oracle, got {kind!r}")
    path = cfg[f"{section}.checkpoint"]
    if not path:
        raise ConfigError(f"{section}.checkpoint is required when {section}.metric = learned")
    params = diffnet.load_params(path)
    if params.input_dim != env.obs_dim:
        raise ConfigError(f"checkpoint input dim {params.input_dim} != {env.name} obs_dim {env.obs_dim}")
    spec = QuasimetricSpec.parse(cfg["train.quasimetric"])
    return LearnedMetric(params, spec, env, rng=np.random.default_rng([_int(cfg, "seed"), 5]))


def checkpoint_base(overrides, section):
    """Environment and training keys echoed next to a checkpoint, if any."""
    for item in overrides:
        if item.startswith(f"{section}.checkpoint="):
            echoed = Path(item.split("=", 1)[1]).parent / "config.txt"
            if echoed.exists():
                keep = parse_config_text(echoed.read_text(), str(echoed))
                return {k: v for k, v in keep.items() if k.startswith(("env.", "train."))}
    return {}


# -- commands ------------------------------------------------------------------


def cmd_collect(cfg):
    env = build_env(cfg)
    out = _out_dir(cfg)
    n, max_len, seed = _int(cfg, "data.n_trajectories"), _int(cfg, "data.max_len"), _int(cfg, "seed")
    if max_len < 2:
        raise ConfigError("data.max_len must be at least 2")
    data = ds_mod.collect(env, n, max_len, seed)
    data.save(out / "dataset.txt")
    _write_run_files(out, cfg, "collect", env=env.name, seed=seed, trajectories=len(data), states=data.n_states)
    return out / "dataset.txt"


def run_training(cfg, out):
    env = build_env(cfg)
    data = _load_dataset(cfg, env)
    tcfg = build_train_config(cfg)
    seed = _int(cfg, "seed")
    n_pairs = _int(cfg, "eval.n_pairs")

    def evaluator(params):
        metric = LearnedMetric(params, tcfg.quasimetric, env, rng=np.random.default_rng([seed, 3]))
        return evaluate(metric, env, pair_sample_size=n_pairs, rng=np.random.default_rng([seed, 4]))

    state = train(data, tcfg, seed, evaluator=evaluator)
    write_rows(out / "metrics.csv", state.history, METRIC_COLUMNS)
    diffnet.save_params(state.params, out / "checkpoint.bin")
    _write_run_files(
        out, cfg, "train", env=env.name, seed=seed, algorithm=tcfg.algorithm,
        steps=state.step, rows=len(state.history), trajectories=len(data),
    )
    return state


def cmd_train(cfg):
    out = _out_dir(cfg)
    state = run_training(cfg, out)
    return state.history[-1]


def cmd_eval(cfg):
    env = build_env(cfg)
    out = _out_dir(cfg)
    metric = _metric(cfg, env, "eval")
    report = evaluate(
        metric, env, pair_sample_size=_int(cfg, "eval.n_pairs"),
        rng=np.random.default_rng([_int(cfg, "seed"), 4]),
    )
    report.to_csv(out / "eval.csv")
    _write_run_files(out, cfg, "eval", env=env.name, seed=cfg["seed"], n_pairs=report.n_pairs)
    return report.as_row()


def cmd_plan(cfg):
    env = build_env(cfg)
    out = _out_dir(cfg)
    metric = _metric(cfg, env, "plan")
    pcfg = build_plan_config(cfg)
    episodes = _int(cfg, "plan.episodes")
    results = planner.run_suite(env, metric, pcfg, episodes, _int(cfg, "seed"))
    traces = out / "traces"
    traces.mkdir(exist_ok=True)
    for k, r in enumerate(results):
        r.write_trace(traces / f"episode_{k:04d}.csv")
    summary = planner.success_summary(results)
    write_rows(out / "summary.csv", [summary], SUMMARY_COLUMNS)
    _write_run_files(out, cfg, "plan", env=env.name, seed=cfg["seed"], episodes=episodes)
    return summary


def cmd_gt(cfg):
    env = build_env(cfg)
    out = _out_dir(cfg)
    env.ground_truth.to_csv(out / "ground_truth.csv")
    _write_run_files(out, cfg, "gt", env=env.name, states=env.ground_truth.n_states)
    return out / "ground_truth.csv"


def cmd_sweep(cfg):
    """One training run (and metrics CSV) per value of ``sweep.key``."""
    key = cfg["sweep.key"]
    if key not in DEFAULTS or key.startswith("sweep.") or key in ("seed", "out"):
        raise ConfigError(f"cannot sweep over {key!r}")
    values = [v.strip() for v in cfg["sweep.values"].split(";" if ";" in cfg["sweep.values"] else ",")]
    values = [v for v in values if v]
    if not values:
        raise ConfigError("sweep.values is empty")
    root = _out_dir(cfg)
    rows = []
    for v in values:
        sub = dict(cfg, **{key: v})
        sub["out"] = str(root / f"{key.split('.')[-1]}={v}")
        run_dir = _out_dir(sub)
        state = run_training(sub, run_dir)
        rows.append({"value": v, **state.history[-1]})
    write_rows(root / "sweep.csv", rows, ("value", *METRIC_COLUMNS))
    _write_run_files(root, cfg, "sweep", key=key, values=",".join(values))
    return rows


COMMANDS = {
    "collect": cmd_collect,
    "train": cmd_train,
    "eval": cmd_eval,
    "plan": cmd_plan,
    "gt": cmd_gt,
    "sweep": cmd_sweep,
}


def build_parser():
    p = argparse.ArgumentParser(prog="madlearn", description="Learn minimum-action-distance embeddings.")
    p.add_argument("--version", action="version", version=f"madlearn {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sp = sub.add_parser(name, help=(fn.__doc__ or name).strip().splitlines()[0])
        sp.add_argument("--config", action="append", default=[], help="key = value config file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
        sp.add_argument("--seed", help="seed (falls back to MAD_SEED)")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--env", help="environment name")
        sp.add_argument("--checkpoint", help="checkpoint for eval/plan")
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.out is not None:
        overrides.append(f"out={args.out}")
    if args.env is not None:
        overrides.append(f"env.name={args.env}")
    if args.checkpoint is not None:
        section = "plan" if args.command == "plan" else "eval"
        overrides.append(f"{section}.checkpoint={args.checkpoint}")
    try:
        base = checkpoint_base(overrides, args.command) if args.command in ("eval", "plan") else {}
        cfg = resolve_config(args.config, overrides, base=base)
        result = COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"madlearn: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonFiniteLossError, diffnet.NumericError) as exc:
        print(f"madlearn: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ds_mod.DatasetFormatError) as exc:
        print(f"madlearn: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    if isinstance(result, dict):
        print(" ".join(f"{k}={_str(v)}" for k, v in result.items() if k in METRIC_COLUMNS + SUMMARY_COLUMNS + ("n_pairs",)))
    elif isinstance(result, list):
        for row in result:
            print(" ".join(f"{k}={_str(v)}" for k, v in row.items() if k in ("value",) + METRIC_COLUMNS))
    else:
        print(result)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
