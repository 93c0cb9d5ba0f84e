"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 training or
numerical error.
"""
from __future__ import annotations

import argparse
import json
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import experiments as ex
from .bayesopt import DiscretePolicy
from .config import RUNS_ENV, load_config
from .data import load_dataset, save_dataset
from .ddpg import DdpgAgent, train_offline_ddpg
from .ensemble import load_ensemble
from .exceptions import ConfigurationError, DataError, NumericalError, OrpcoError, TrainingError
from .ib import rollout_dataset
from .ope import RewardPredictor, evaluate_offline, fit_logging_propensity
from .reward import PenalizedEvaluator

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_TRAINING = 0, 2, 3, 4


def _config(args):
    overrides = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        s = args.seed
        overrides += [f"seeds.data={s}", f"seeds.split={s}", f"seeds.ensemble={s}", f"seeds.evaluation={s}"]
    return load_config(args.config, overrides)


def _out(args, cfg, sub):
    if getattr(args, "out", None):
        return Path(args.out)
    root = getattr(args, "runs_dir", None)
    return cfg.run_dir(root) / sub


def _print_json(doc):
    print(json.dumps(doc, indent=2, default=ex._json_default))


def _parse_row(text):
    return np.array([float(v) for v in text.split(",")], dtype=float)


def _evaluator_for(args, cfg, ens, reward=None):
    """Evaluator calibrated on ``--calibration`` data (or explicit thresholds)."""
    if reward is None:
        reward = (ex.ib_reward_function() if ens.schema_.next_state is not None
                  else ex.discrete_reward(None, ens.schema_))
    p = cfg.penalty
    ev = PenalizedEvaluator(ens, reward, ens.normalizer_, n_samples=cfg.ensemble.n_samples,
                            c=p.c, mopo_weight=p.mopo_weight, random_state=cfg.seeds.evaluation,
                            epsilon=getattr(args, "epsilon", None),
                            disc_threshold=getattr(args, "disc_threshold", None))
    if getattr(args, "calibration", None):
        cal = load_dataset(args.calibration, ens.schema_)
        ev.fit(cal.inputs[: p.calibration_rows])
    elif ev.epsilon is not None:
        ev.epsilon_ = float(ev.epsilon)
        ev.disc_threshold_ = float(ev.disc_threshold if ev.disc_threshold is not None else 1.0)
    else:
        raise ConfigurationError("pass --calibration <csv> or --epsilon")
    return ev


# -- commands -----------------------------------------------------------------------


def cmd_train_dynamics(args):
    cfg = _config(args)
    if args.data:
        train = load_dataset(args.data, args.schema)
        val = load_dataset(args.validation, train.schema).with_normalizer(train.normalizer) \
            if args.validation else train
    else:
        _, _, train, val, _ = ex.discrete_data(cfg)
    kind = args.kind or cfg.ensemble.kind
    out = _out(args, cfg, f"ensemble/{kind}")
    tmp = Path(tempfile.mkdtemp(prefix=".partial-", dir=out.parent if out.parent.exists() else None))
    try:
        ens = ex.fit_dynamics(cfg, train, val, kind)
        ens.save(tmp)
        if ens.search_log_ is not None:
            ex.write_json(tmp / "search_log.json", ens.search_log_)
        out.parent.mkdir(parents=True, exist_ok=True)
        if out.exists():
            shutil.rmtree(out)
        shutil.move(str(tmp), str(out))
    finally:
        ex.clean_partial(tmp)
    print(out)
    return EXIT_OK


def cmd_eval_reward(args):
    cfg = _config(args)
    ens = load_ensemble(args.ensemble)
    ev = _evaluator_for(args, cfg, ens)
    rows = load_dataset(args.input, ens.schema_).inputs if args.input else _parse_row(args.row)[None, :]
    for report in ev.reports(rows, cfg.seeds.evaluation):
        print(json.dumps(report.to_dict(), default=ex._json_default))
    return EXIT_OK


def cmd_optimize(args):
    cfg = _config(args)
    ens = load_ensemble(args.ensemble)
    ev = _evaluator_for(args, cfg, ens)
    policy = DiscretePolicy(ev, args.evaluator, ex.bo_config(cfg, cfg.seeds.policy[0])).fit()
    if Path(args.x).exists():
        X = np.atleast_2d(np.loadtxt(args.x, delimiter=",", ndmin=2))
    else:
        X = _parse_row(args.x)[None, :]
    out = []
    for k, x in enumerate(X):
        u, trace = policy.optimize(x, cfg.seeds.policy[0] + k)
        out.append({"x": x, "u": u, "value": max(trace.values), "trace": trace.to_dict()})
    _print_json(out if len(out) > 1 else out[0])
    return EXIT_OK


def cmd_train_policy(args):
    cfg = _config(args)
    data = Path(args.data)
    dataset = load_dataset(data if data.suffix == ".csv" else data / "dataset.csv")
    ens = load_ensemble(args.ensemble)
    ev = _evaluator_for(args, cfg, ens, ex.ib_reward_function())
    out = _out(args, cfg, f"policy/{args.evaluator}")
    dcfg = ex.ddpg_config(cfg)
    starts = dataset.x[dataset.t == 0] if dataset.t is not None else None
    summary = []
    for seed in range(args.seeds):
        agent, _, log = train_offline_ddpg(ev, dataset, dcfg, seed, args.evaluator, starts)
        ckpt = agent.save(out / f"seed_{seed}")
        log.to_csv(ckpt / "episodes.csv")
        summary.append({"seed": seed, "checkpoint": str(ckpt), "final_return": log.episode_returns[-1]})
    _print_json(summary)
    return EXIT_OK


def cmd_simulate(args):
    cfg = _config(args)
    dataset, trajectories = rollout_dataset(args.policy, args.n_traj, args.length, args.seed,
                                            ex.surrogate_config(cfg))
    out = Path(args.out)
    save_dataset(dataset, out / "dataset.csv")
    ex.write_json(out / "trajectories.json", [t.to_dict() for t in trajectories])
    print(out)
    return EXIT_OK


def cmd_ope(args):
    cfg = _config(args)
    spec = json.loads(Path(args.policy).read_text(encoding="utf-8"))
    ens = load_ensemble(spec["ensemble"])
    args.epsilon, args.disc_threshold = spec["epsilon"], spec.get("disc_threshold")
    ev = _evaluator_for(args, cfg, ens)
    policy = DiscretePolicy(ev, spec.get("evaluator", "rp"), ex.bo_config(cfg, cfg.seeds.policy[0])).fit()
    test = load_dataset(args.test, ens.schema_)
    train = load_dataset(args.train, ens.schema_)
    reward = ev.reward
    predictor = RewardPredictor(epochs=cfg.ope.predictor_epochs).fit(train.inputs, reward(train.y))
    logging = fit_logging_propensity(train, epochs=cfg.ope.propensity_epochs)
    report, _ = evaluate_offline(test, policy, reward, predictor, logging, cfg.ope.n_repeats, cfg.seeds.policy[0])
    _print_json(report.to_dict())
    return EXIT_OK


def cmd_report_ood(args):
    cfg = _config(args)
    out = _out(args, cfg, "reports/ood")
    stats = ex.run_ood(cfg, out)
    _print_json({"curve": stats["curve"], "separation": stats["separation"], "out": str(out)})
    return EXIT_OK


def cmd_experiment_discrete(args):
    cfg = _config(args)
    rows = ex.run_discrete(cfg, args.out)
    _print_json(rows)
    return EXIT_OK


def cmd_experiment_continuous(args):
    cfg = _config(args)
    if cfg.task != "continuous":
        cfg = load_config(args.config, list(args.set or []) + ["task=\"continuous\""])
    rows = ex.run_continuous(cfg, args.out)
    _print_json(rows)
    return EXIT_OK


# -- parser -------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="orpco", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="TOML experiment configuration")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config value")
        p.add_argument("--runs-dir", help=f"output root (default ${RUNS_ENV} or ./runs)")
        p.set_defaults(fn=fn)
        return p

    p = command("train-dynamics", cmd_train_dynamics, "train a CGAN or GPN ensemble")
    p.add_argument("--data", help="training CSV (default: data section of the config)")
    p.add_argument("--schema", help="schema JSON (default: sidecar next to the CSV)")
    p.add_argument("--validation", help="validation CSV used by the GPN search")
    p.add_argument("--kind", choices=["cgan", "gpn"])
    p.add_argument("--out")
    p.add_argument("--seed", type=int)

    calib_args = [("--calibration", dict(help="validation CSV used to calibrate epsilon")),
                  ("--epsilon", dict(type=float)), ("--disc-threshold", dict(type=float))]

    p = command("eval-reward", cmd_eval_reward, "uncertainty report per input row")
    p.add_argument("--ensemble", required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--input", help="dataset CSV whose (x, u) rows are scored")
    g.add_argument("--row", help="comma-separated x and u values")
    for flag, kw in calib_args:
        p.add_argument(flag, **kw)

    p = command("optimize", cmd_optimize, "Bayesian optimisation of controls for given conditions")
    p.add_argument("--ensemble", required=True)
    p.add_argument("--x", required=True, help="comma-separated condition row or CSV file of rows")
    p.add_argument("--evaluator", choices=["rp", "f1", "f3", "f4"], default="rp")
    for flag, kw in calib_args:
        p.add_argument(flag, **kw)

    p = command("train-policy", cmd_train_policy, "offline DDPG inside a trained ensemble")
    p.add_argument("--data", required=True, help="dataset CSV or directory written by simulate")
    p.add_argument("--ensemble", required=True)
    p.add_argument("--evaluator", choices=["rp", "f1", "f3", "f4"], default="rp")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--out")
    for flag, kw in calib_args:
        p.add_argument(flag, **kw)

    p = command("simulate", cmd_simulate, "roll out a behaviour policy on the surrogate environment")
    p.add_argument("--policy", choices=["random", "safe"], required=True)
    p.add_argument("--n-traj", type=int, default=300)
    p.add_argument("--length", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = command("ope", cmd_ope, "off-policy evaluation of a discrete policy")
    p.add_argument("--policy", required=True, help="policy JSON: ensemble, evaluator, epsilon")
    p.add_argument("--test", required=True)
    p.add_argument("--train", required=True, help="training CSV for the reward and propensity models")

    p = command("report-ood", cmd_report_ood, "uncertainty curves, histograms and AUROC")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)

    p = command("experiment-discrete", cmd_experiment_discrete, "full discrete-control case study")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)

    p = command("experiment-continuous", cmd_experiment_continuous, "full continuous-control case study")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigurationError as exc:
        print(f"{args.command}: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"{args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, NumericalError) as exc:
        print(f"{args.command}: training error: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except OrpcoError as exc:
        print(f"{args.command}: error: {exc}", file=sys.stderr)
        return EXIT_TRAINING


if __name__ == "__main__":
    sys.exit(main())
