"""End-to-end pipelines for the discrete and continuous case studies.

Every stage writes its artifacts below one run directory and records them in
a manifest, so a finished run can be inspected (or re-run bit-identically)
from the files alone.
"""
from __future__ import annotations

import json
import shutil
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.metrics import roc_auc_score

from .bayesopt import BoConfig, DiscretePolicy
from .config import ExperimentConfig
from .data import Schema, load_dataset, randomize_inputs, save_dataset, split
from .ddpg import DdpgConfig, evaluate_policy, train_offline_ddpg
from .ensemble import train_ensemble
from .exceptions import ConfigurationError
from .gpn import search_gpn
from .ib import BEHAVIORS, SurrogateConfig, ib_reward, policy_return, rollout_dataset
from .ope import RewardPredictor, evaluate_offline, fit_logging_propensity
from .plotting import curve_svg, histogram_svg
from .reward import PenalizedEvaluator, RewardFunction, box_indicator
from .synthetic import MixtureProcess, generate_synthetic_discrete


@dataclass
class RunManifest:
    config_hash: str
    seeds: dict
    artifacts: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)

    @contextmanager
    def stage(self, name):
        start = time.perf_counter()
        yield
        self.timings[name] = round(time.perf_counter() - start, 3)

    def add(self, path):
        self.artifacts.append(str(path))
        return path

    def write(self, directory):
        path = Path(directory) / "manifest.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        doc = {"config_hash": self.config_hash, "seeds": self.seeds, "artifacts": self.artifacts,
               "timings": self.timings, "metrics": self.metrics}
        path.write_text(json.dumps(doc, indent=2, default=_json_default) + "\n", encoding="utf-8")
        return path


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not serialisable: {type(o).__name__}")


def write_json(path, doc):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, default=_json_default) + "\n", encoding="utf-8")
    return path


def write_csv(path, rows: list[dict]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = list(rows[0]) if rows else []
    lines = [",".join(cols)] + [",".join(_cell(r[c]) for c in cols) for r in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _cell(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


# -- shared stages ----------------------------------------------------------------


def discrete_data(cfg: ExperimentConfig):
    """``(process or None, full dataset, train, validation, test)``."""
    d = cfg.data
    process = None
    if d.source == "synthetic":
        process = MixtureProcess.load(d.process_path) if d.process_path else MixtureProcess()
        dataset = generate_synthetic_discrete(process, d.n_records, cfg.seeds.data)
    elif d.source == "csv":
        if not d.path:
            raise ConfigurationError("data.path is required when data.source = 'csv'")
        dataset = load_dataset(d.path, d.schema_path)
    else:
        raise ConfigurationError("the discrete pipeline needs data.source 'synthetic' or 'csv'")
    train, val, test = split(dataset, d.ratios, cfg.seeds.split)
    return process, dataset, train, val, test


def discrete_reward(process, schema: Schema) -> RewardFunction:
    if process is not None:
        lo, hi = process.reward_box
        return box_indicator(lo, hi)
    lo, hi = schema.bounds("result")
    return box_indicator(lo, hi, name="within_bounds")


def fit_dynamics(cfg: ExperimentConfig, train, val, kind=None, seed=None):
    """Train an ensemble of the requested kind; GPNs go through the grid search first."""
    e = cfg.ensemble
    kind = kind or e.kind
    seed = cfg.seeds.ensemble if seed is None else seed
    log = None
    if kind == "cgan":
        params = dict(hidden_dims=tuple(e.hidden_dims), epochs=e.epochs, batch_size=e.batch_size,
                      n_critic=e.n_critic, gp_weight=e.gp_weight, learning_rate=e.learning_rate,
                      betas=tuple(e.betas), noise_dim=e.noise_dim, lr_final=e.lr_final,
                      standardize=e.standardize, penalize_conditions=e.penalize_conditions,
                      ema_decay=e.ema_decay)
    else:
        params = {}
        if e.gpn_search:
            X, Y = train.normalized()
            Xv, Yv = val.with_normalizer(train.normalizer).normalized()
            params, log = search_gpn(X, Y, Xv, Yv, e.gpn_grid, random_state=seed)
    ens = train_ensemble(train, kind, e.n_members, seed, validation=val, **params)
    ens.search_log_ = log
    return ens


def make_evaluator(cfg: ExperimentConfig, ensemble, reward, val):
    p = cfg.penalty
    ev = PenalizedEvaluator(
        ensemble, reward, ensemble.normalizer_, n_samples=cfg.ensemble.n_samples, c=p.c,
        epsilon=None if p.epsilon == "validation" else float(p.epsilon),
        disc_threshold=None if p.disc_threshold == "validation" else float(p.disc_threshold),
        mopo_weight=p.mopo_weight, random_state=cfg.seeds.evaluation,
    )
    return ev.fit(val.inputs[: p.calibration_rows])


# -- out-of-distribution report ---------------------------------------------------


def auroc(in_dist, ood):
    """AUROC of a score that should be higher on in-distribution inputs."""
    in_dist, ood = np.asarray(in_dist, float), np.asarray(ood, float)
    labels = np.r_[np.ones(len(in_dist)), np.zeros(len(ood))]
    return float(roc_auc_score(labels, np.r_[in_dist, ood]))


def ood_statistics(evaluator, inputs, schema: Schema, seed=0):
    """Uncertainty curves over the number of randomised dimensions and separation scores."""
    rng = np.random.default_rng(seed)
    n_dims = schema.n_conditional + schema.n_control
    eval_seed = seed + 1
    curve = {"n": [], "kappa_mean": [], "kappa_std": [], "varkappa_mean": [], "varkappa_std": []}
    summaries = {}
    for n in range(n_dims + 1):
        s = evaluator.summarize(randomize_inputs(inputs, n, rng, schema), eval_seed)
        summaries[n] = s
        curve["n"].append(n)
        curve["kappa_mean"].append(float(s.kappa.mean()))
        curve["kappa_std"].append(float(s.kappa.std()))
        curve["varkappa_mean"].append(float(s.varkappa.mean()))
        curve["varkappa_std"].append(float(s.varkappa.std()))
    logged, full = summaries[0], summaries[n_dims]
    controls = evaluator.summarize(randomize_inputs(inputs, 0, rng, schema, controls_only=True), eval_seed)
    sets = {"logged": logged, "randomized": full, "controls_randomized": controls}
    values = {name: {"kappa": s.kappa, "varkappa": s.varkappa, "rp": evaluator.values(s, "rp")}
              for name, s in sets.items()}
    separation = {}
    for name in ("randomized", "controls_randomized"):
        separation[name] = {
            "rp": auroc(values["logged"]["rp"], values[name]["rp"]),
            "kappa": auroc(-values["logged"]["kappa"], -values[name]["kappa"]),
            "varkappa": auroc(-values["logged"]["varkappa"], -values[name]["varkappa"]),
            "cutoff_fraction": float(np.mean(values[name]["varkappa"] > evaluator.epsilon_)),
        }
    return {"curve": curve, "separation": separation, "values": values,
            "logged_cutoff_fraction": float(np.mean(logged.varkappa > evaluator.epsilon_))}


def write_ood_report(stats, directory, manifest: RunManifest | None = None):
    directory = Path(directory)
    c = stats["curve"]
    paths = [
        curve_svg(directory / "uncertainty_curve.svg", c["n"],
                  {"kappa": c["kappa_mean"]}, {"kappa": c["kappa_std"]},
                  title="disagreement vs randomised dimensions", xlabel="n", ylabel="kappa"),
        curve_svg(directory / "spread_curve.svg", c["n"],
                  {"varkappa": c["varkappa_mean"]}, {"varkappa": c["varkappa_std"]},
                  title="spread vs randomised dimensions", xlabel="n", ylabel="varkappa"),
    ]
    for metric in ("kappa", "varkappa", "rp"):
        paths.append(histogram_svg(directory / f"hist_{metric}.svg",
                                   {k: v[metric] for k, v in stats["values"].items()},
                                   title=metric, xlabel=metric))
    doc = {k: v for k, v in stats.items() if k != "values"}
    paths.append(write_json(directory / "ood.json", doc))
    if manifest is not None:
        for p in paths:
            manifest.add(p)
    return paths


def run_ood(cfg: ExperimentConfig, out_dir=None):
    out = Path(out_dir) if out_dir else cfg.run_dir() / "reports" / "ood"
    manifest = RunManifest(cfg.digest(), cfg.seeds.model_dump())
    with manifest.stage("data"):
        process, dataset, train, val, test = discrete_data(cfg)
    with manifest.stage("dynamics"):
        ens = fit_dynamics(cfg, train, val)
    ev = make_evaluator(cfg, ens, discrete_reward(process, dataset.schema), val)
    with manifest.stage("ood"):
        stats = ood_statistics(ev, test.inputs[: cfg.ood.n_inputs], dataset.schema, cfg.seeds.evaluation)
    write_ood_report(stats, out, manifest)
    manifest.metrics = {"separation": stats["separation"], "curve": stats["curve"]}
    manifest.write(out)
    return stats


# -- discrete case study ------------------------------------------------------------


def bo_config(cfg: ExperimentConfig, seed=0) -> BoConfig:
    b = cfg.optimizer.bo
    return BoConfig(n_init=b.n_init, n_iter=b.n_iter, n_candidates=b.n_candidates,
                    n_refine=b.n_refine, xi=b.xi, seed=seed)


def run_discrete(cfg: ExperimentConfig, out_dir=None):
    """Train dynamics, calibrate, optimise per test condition and evaluate every method offline."""
    run = Path(out_dir) if out_dir else cfg.run_dir()
    manifest = RunManifest(cfg.digest(), cfg.seeds.model_dump())
    with manifest.stage("data"):
        process, dataset, train, val, test = discrete_data(cfg)
        manifest.add(save_dataset(train, run / "data" / "train.csv"))
        manifest.add(save_dataset(test, run / "data" / "test.csv"))
    reward = discrete_reward(process, dataset.schema)
    test_n = test.subset(np.arange(min(cfg.ope.n_test, len(test))))

    evaluators = {}
    with manifest.stage("dynamics"):
        ens = fit_dynamics(cfg, train, val, "cgan")
        manifest.add(ens.save(run / "ensemble" / "cgan"))
        ev = make_evaluator(cfg, ens, reward, val)
        for kind in cfg.optimizer.evaluators:
            evaluators[kind] = (ev, kind)
        if cfg.optimizer.gpn_baseline:
            gpn = fit_dynamics(cfg, train, val, "gpn")
            manifest.add(gpn.save(run / "ensemble" / "gpn"))
            evaluators["gpn_rp"] = (make_evaluator(cfg, gpn, reward, val), "rp")
    with manifest.stage("ope_models"):
        rewards_train = reward(train.y)
        predictor = RewardPredictor(epochs=cfg.ope.predictor_epochs, random_state=cfg.seeds.evaluation)
        predictor.fit(train.inputs, rewards_train)
        logging = fit_logging_propensity(train, epochs=cfg.ope.propensity_epochs,
                                         random_state=cfg.seeds.evaluation)

    rows = []
    with manifest.stage("policies"):
        for name, (evaluator, kind) in evaluators.items():
            policy = DiscretePolicy(evaluator, kind, bo_config(cfg, cfg.seeds.policy[0])).fit()
            report, u_star = evaluate_offline(test_n, policy, reward, predictor, logging,
                                              cfg.ope.n_repeats, cfg.seeds.policy[0])
            row = {"method": name, "dm": report.dm, "ips": report.ips, "wis": report.wis,
                   "dr": report.dr, "n_eff": report.n_eff, "max_weight": report.max_weight}
            if process is not None:
                row["true"] = float(np.mean(process.expected_reward(test_n.x, u_star)))
            rows.append(row)
            write_json(run / "reports" / f"ope_{name}.json", report.to_dict())
    if process is not None:
        rows.append({"method": "logging", "dm": float("nan"), "ips": float("nan"), "wis": float("nan"),
                     "dr": float("nan"), "n_eff": float("nan"), "max_weight": float("nan"),
                     "true": float(np.mean(process.expected_reward(test_n.x, test_n.u)))})
    manifest.add(write_csv(run / "reports" / "discrete_table.csv", rows))
    manifest.add(write_json(run / "reports" / "discrete_table.json", rows))
    manifest.metrics = {"table": rows, "epsilon": ev.epsilon_, "disc_threshold": ev.disc_threshold_}
    manifest.add(manifest.write(run / "reports"))
    return rows


# -- continuous case study ----------------------------------------------------------


def surrogate_config(cfg: ExperimentConfig) -> SurrogateConfig:
    return SurrogateConfig(instability=cfg.surrogate.instability,
                           instability_gain=cfg.surrogate.instability_gain)


def ddpg_config(cfg: ExperimentConfig) -> DdpgConfig:
    d = cfg.optimizer.ddpg
    return DdpgConfig(episodes=d.episodes, horizon=d.horizon, gamma=d.gamma, tau=d.tau,
                      batch_size=d.batch_size, buffer_size=d.buffer_size, actor_lr=d.actor_lr,
                      critic_lr=d.critic_lr, reward_scale=d.reward_scale)


def ib_reward_function() -> RewardFunction:
    return RewardFunction(ib_reward, "ib_reward")


def run_continuous(cfg: ExperimentConfig, out_dir=None):
    """Behaviour datasets -> ensembles -> offline DDPG per evaluator and seed -> surrogate returns."""
    run = Path(out_dir) if out_dir else cfg.run_dir()
    manifest = RunManifest(cfg.digest(), cfg.seeds.model_dump())
    env = surrogate_config(cfg)
    dcfg = ddpg_config(cfg)
    s = cfg.surrogate
    n_eval = cfg.optimizer.ddpg.eval_episodes
    eval_seed = cfg.seeds.evaluation
    rows = []
    for behavior in s.behaviors:
        with manifest.stage(f"{behavior}:data"):
            dataset, _ = rollout_dataset(behavior, s.n_traj, s.horizon, cfg.seeds.data, env)
            train, val = split(dataset, (0.9, 0.1), cfg.seeds.split)
            manifest.add(save_dataset(dataset, run / "data" / f"{behavior}.csv"))
        returns = policy_return(BEHAVIORS[behavior], n_eval, s.horizon, eval_seed, env)
        rows.append({"dataset": behavior, "method": "behavior", "mean": float(returns.mean()),
                     "std": float(returns.std(ddof=1)), "seeds": 1})
        kinds = ["cgan"] + (["gpn"] if cfg.optimizer.gpn_baseline else [])
        for kind in kinds:
            with manifest.stage(f"{behavior}:{kind}"):
                ens = fit_dynamics(cfg, train, val, kind)
                manifest.add(ens.save(run / "ensemble" / f"{behavior}_{kind}"))
                ev = make_evaluator(cfg, ens, ib_reward_function(), val)
            methods = list(cfg.optimizer.evaluators) if kind == "cgan" else ["rp"]
            for method in methods:
                label = method if kind == "cgan" else "gpn_rp"
                per_seed = []
                with manifest.stage(f"{behavior}:{label}"):
                    for seed in cfg.seeds.policy:
                        agent, _, log = train_offline_ddpg(ev, train, dcfg, seed, method,
                                                           initial_states=dataset.x[dataset.t == 0])
                        ckpt = run / "policy" / behavior / label / f"seed_{seed}"
                        manifest.add(agent.save(ckpt))
                        log.to_csv(ckpt / "episodes.csv")
                        per_seed.append(evaluate_policy(agent, env, n_eval, s.horizon, eval_seed)[0])
                rows.append({"dataset": behavior, "method": label, "mean": float(np.mean(per_seed)),
                             "std": float(np.std(per_seed, ddof=1)) if len(per_seed) > 1 else 0.0,
                             "seeds": len(per_seed)})
    manifest.add(write_csv(run / "reports" / "continuous_table.csv", rows))
    manifest.add(write_json(run / "reports" / "continuous_table.json", rows))
    manifest.metrics = {"table": rows}
    manifest.add(manifest.write(run / "reports"))
    return rows


def clean_partial(path):
    """Remove a partially written artifact directory."""
    path = Path(path)
    if path.exists():
        shutil.rmtree(path)
