"""Experiment orchestration: training runs, evaluation, sweeps and run directories.

Every run directory holds the resolved config, a JSON manifest and the CSV
outputs. CSV floats are written with ``repr`` so identical inputs give
byte-identical files.
"""

from __future__ import annotations

import csv
import datetime as _dt
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from ._validation import ConfigError
from .channel import sample_fading
from .config import ExperimentConfig
from .env import CompNomaEnv, HybridAction
from .hppo import CURVE_COLUMNS, EPISODE_COLUMNS, HPPO, TrainingCurve
from .oracle import RESULT_COLUMNS, brute_force_max

logger = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "ARIS_HPPO_OUTPUT_ROOT"
DEFAULT_OUTPUT_ROOT = "runs"
SWEEP_ELEMENTS_COLUMNS = ("n_elements", "method", "mean_sum_rate", "std")
SWEEP_POWER_COLUMNS = ("p_dbm", "design", "mean_sum_rate", "std", "violation_rate")
EVAL_COLUMNS = ("snapshot_seed", "sum_rate", "violation_rate")
ELEMENT_DETAIL_COLUMNS = ("n_elements", "method", "seed", "snapshot_seed", "sum_rate",
                          "violation_rate")
ORACLE_METHOD = "ORACLE"


# -- run directories -----------------------------------------------------------

def output_root():
    return Path(os.environ.get(OUTPUT_ROOT_ENV, DEFAULT_OUTPUT_ROOT))


def resolve_run_dir(cfg: ExperimentConfig, command, out=None):
    """Run directory: explicit ``out``, else ``run.output_dir``, else
    ``<root>/<command>-<config hash prefix>``."""
    if out:
        return Path(out)
    if cfg.get("run", "output_dir"):
        return Path(cfg.get("run", "output_dir"))
    return output_root() / f"{command}-{cfg.config_hash()[:12]}"


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    """Provenance record written before a run starts and finalized after it ends."""

    command: str
    config_hash: str
    seeds: list
    code_version: str = __version__
    started: str = field(default_factory=_now)
    finished: str | None = None
    outputs: list = field(default_factory=list)

    def write(self, run_dir):
        path = Path(run_dir) / "manifest.json"
        tmp = path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(self.__dict__, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        os.replace(tmp, path)

    @classmethod
    def read(cls, run_dir):
        data = json.loads((Path(run_dir) / "manifest.json").read_text(encoding="utf-8"))
        return cls(**data)


class RunDirectory:
    """Owns one run directory; refuses to reuse a finalized one."""

    def __init__(self, path, cfg: ExperimentConfig, command, seeds):
        self.path = Path(path)
        manifest = self.path / "manifest.json"
        if manifest.exists() and RunManifest.read(self.path).finished is not None:
            raise RuntimeError(f"run directory {self.path} is finalized; choose a new output directory")
        self.path.mkdir(parents=True, exist_ok=True)
        (self.path / "config.cfg").write_text(cfg.to_text(), encoding="utf-8")
        self.manifest = RunManifest(command, cfg.config_hash(), list(seeds))
        self.manifest.write(self.path)

    def file(self, name):
        self.manifest.outputs.append(name)
        return self.path / name

    def finalize(self):
        self.manifest.outputs = sorted(set(self.manifest.outputs))
        self.manifest.finished = _now()
        self.manifest.write(self.path)


def write_csv(path, columns, rows):
    """Write rows with a fixed header; floats use repr for exact, stable text."""
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    os.replace(tmp, path)


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# -- training --------------------------------------------------------------------

def make_env(cfg: ExperimentConfig, variant=None, n_aris=None, n_tris=None, p_tx_dbm=None,
             reward_design=None, n_envs=None):
    changes = {}
    if n_aris is not None:
        changes["n_aris"] = n_aris
    if n_tris is not None:
        changes["n_tris"] = n_tris
    if p_tx_dbm is not None:
        changes["p_tx_dbm"] = float(p_tx_dbm)
    env_changes = {}
    if variant is not None:
        env_changes["variant"] = variant
    if reward_design is not None:
        env_changes["reward_design"] = reward_design
    return CompNomaEnv(cfg.topology(), cfg.channel_params(**changes), cfg.env_config(**env_changes),
                       n_envs=n_envs or cfg.get("env", "n_envs"))


def train_agent(cfg: ExperimentConfig, seed, episodes=None, checkpoint_path=None, **env_kw):
    """Train one agent; ``env_kw`` forwards to :func:`make_env`."""
    env = make_env(cfg, **env_kw)
    agent = HPPO(random_state=int(seed), **cfg.agent_params(episodes))
    agent.fit(env, checkpoint_path=checkpoint_path)
    return agent, env


def plateau_metrics(curve: TrainingCurve, fraction=0.2):
    """Means over the plateau window (last ``fraction`` of episodes); rates in bit/s/Hz."""
    return {
        "cum_reward": curve.plateau_value("cum_reward", fraction),
        "effective_sum_rate": curve.plateau_value("mean_effective_sum_rate", fraction),
        "sum_rate": curve.plateau_value("mean_sum_rate", fraction),
        "violation_rate": curve.plateau_value("violation_rate", fraction),
        "plateaued": curve.has_plateaued(fraction),
    }


def parallel_map(fn, items, workers=1):
    """Ordered map; cells are independent and seeded, so the result does not
    depend on ``workers``."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(*it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, *zip(*items)))


# -- evaluation --------------------------------------------------------------------

def snapshot_seeds(cfg: ExperimentConfig, count=None):
    start = cfg.get("oracle", "snapshot_seed")
    return [start + i for i in range(count or cfg.get("oracle", "snapshots"))]


def snapshot_fading(params, seed):
    return sample_fading(params, np.random.default_rng(int(seed)))


def evaluate_on_snapshot(agent: HPPO, env: CompNomaEnv, fading, settle_fraction=0.75):
    """Run the deterministic policy with fading frozen to one snapshot.

    The ARIS starts at the area centre; the score is the mean effective sum
    rate (bit/s/Hz) over the slots after ``settle_fraction`` of the horizon,
    once the policy has had time to reposition.
    """
    env1 = CompNomaEnv(env.topology, env.params, env.config, n_envs=1)
    env1.freeze_fading(fading)
    state = env1.reset(seed=0)
    rates, viol = [], []
    horizon = env1.config.horizon
    start = int(settle_fraction * horizon)
    for t in range(horizon):
        step = env1.step(agent.predict(state))
        state = step.next_state
        if t >= start:
            rates.append(float(step.report.effective_sum_rate[0]) / env.params.bandwidth_hz)
            viol.append(bool(step.violations.any[0]))
    return float(np.mean(rates)), float(np.mean(viol))


def element_cell(cfg, n_aris, n_tris, method, seed, episodes, snapshots):
    """Train ``method`` for one seed and score it on fixed snapshots.

    Returns:
        (per-snapshot scores in bit/s/Hz, per-snapshot violation rates, curve)
    """
    params = cfg.channel_params(n_aris=n_aris, n_tris=n_tris)
    agent, env = train_agent(cfg, seed, episodes, variant=method, n_aris=n_aris, n_tris=n_tris)
    scores, viols = [], []
    for s in snapshots:
        score, viol = evaluate_on_snapshot(agent, env, snapshot_fading(params, s))
        scores.append(score)
        viols.append(viol)
    return scores, viols, agent.curve_


def oracle_point(cfg, n_aris, n_tris, snapshots, phase_levels=None):
    """Brute-force optimum per snapshot; returns (rates in bit/s/Hz, results)."""
    params = cfg.channel_params(n_aris=n_aris, n_tris=n_tris)
    grid = cfg.search_grid()
    if phase_levels is not None:
        grid.phase_levels = phase_levels
    results = [brute_force_max(cfg.topology(), params, grid, snapshot_fading(params, s),
                               objective=cfg.get("oracle", "objective")) for s in snapshots]
    return [r.sum_rate / params.bandwidth_hz for r in results], results


def power_cell(cfg, p_dbm, design, seed, episodes):
    """Plateau metrics of one (power, design, seed) training run."""
    agent, _ = train_agent(cfg, seed, episodes, p_tx_dbm=p_dbm, reward_design=design)
    return plateau_metrics(agent.curve_), agent.curve_


# -- commands --------------------------------------------------------------------

def run_train(cfg: ExperimentConfig, out=None):
    """Train ``agent.variant`` for every seed; write curves, checkpoints and a manifest."""
    seeds = cfg.get("run", "seeds")
    run = RunDirectory(resolve_run_dir(cfg, "train", out), cfg, "train", seeds)
    summaries = []
    for seed in seeds:
        ckpt = run.file(f"policy_seed{seed}.ckpt")
        agent, _ = train_agent(cfg, seed, checkpoint_path=ckpt)
        write_curve(run, seed, agent.curve_)
        summaries.append((seed, plateau_metrics(agent.curve_)))
    write_plot_script(run)
    run.finalize()
    return run.path, summaries


def write_curve(run: RunDirectory, seed, curve: TrainingCurve, prefix=""):
    write_csv(run.file(f"{prefix}curve_seed{seed}.csv"), CURVE_COLUMNS, curve.rows)
    write_csv(run.file(f"{prefix}episodes_seed{seed}.csv"), EPISODE_COLUMNS, curve.episode_rows)


def run_eval(cfg: ExperimentConfig, checkpoint, out=None):
    """Score a saved policy on the configured snapshots (deterministic actions)."""
    env = make_env(cfg)
    try:
        agent = HPPO().load_policy(checkpoint, env)
    except OSError as exc:
        raise RuntimeError(f"cannot read checkpoint {checkpoint}: {exc.strerror}") from None
    if agent.policy_.encoder.in_dim != env.state_dim:
        raise ConfigError(f"checkpoint expects {agent.policy_.encoder.in_dim} state features but "
                          f"the config yields {env.state_dim}")
    run = RunDirectory(resolve_run_dir(cfg, "eval", out), cfg, "eval", [])
    rows = []
    for s in snapshot_seeds(cfg, cfg.get("run", "eval_episodes")):
        score, viol = evaluate_on_snapshot(agent, env, snapshot_fading(env.params, s))
        rows.append((s, score, viol))
    write_csv(run.file("eval.csv"), EVAL_COLUMNS, rows)
    run.finalize()
    return run.path, rows


def run_oracle(cfg: ExperimentConfig, out=None, elements=None):
    """Brute-force optimum per snapshot for each ARIS element count."""
    n_tris = cfg.get("oracle", "n_tris")
    counts = elements or [cfg.get("oracle", "n_aris")]
    for n in counts:   # fail on budget before any work
        cfg.search_grid().check_budget(cfg.topology(), n, n_tris)
    snaps = snapshot_seeds(cfg)
    run = RunDirectory(resolve_run_dir(cfg, "oracle", out), cfg, "oracle", [])
    rows = []
    for n in counts:
        rates, results = oracle_point(cfg, n, n_tris, snaps)
        for s, rate, res in zip(snaps, rates, results):
            rows.append((n, s, rate, float(res.position[0]), float(res.position[1])))
    write_csv(run.file("oracle.csv"), RESULT_COLUMNS, rows)
    run.finalize()
    return run.path, rows


def run_sweep_elements(cfg: ExperimentConfig, out=None, workers=1):
    """Element-count sweep: trained methods vs. the brute-force optimum.

    Uses ``sweep.element_phase_levels`` for the oracle lattice; counts whose
    enumeration exceeds ``oracle.budget`` get no oracle row.
    """
    seeds = cfg.get("sweep", "seeds")
    n_tris = cfg.get("sweep", "element_n_tris")
    snaps = snapshot_seeds(cfg)
    episodes = cfg.get("sweep", "episodes")
    grid = cfg.search_grid()
    grid.phase_levels = cfg.get("sweep", "element_phase_levels")
    run = RunDirectory(resolve_run_dir(cfg, "sweep-elements", out), cfg, "sweep-elements", seeds)
    cells = [(cfg, n, n_tris, method, seed, episodes, snaps)
             for n in cfg.get("sweep", "elements")
             for method in cfg.get("sweep", "element_methods") for seed in seeds]
    results = parallel_map(element_cell, cells, workers)
    rows, detail, per = [], [], {}
    for cell, (scores, viols, curve) in zip(cells, results):
        _, n, _, method, seed = cell[:5]
        per.setdefault((n, method), []).append(float(np.mean(scores)))
        detail += [(n, method, seed, s, sc, v) for s, sc, v in zip(snaps, scores, viols)]
        write_curve(run, seed, curve, prefix=f"n{n}_{method}_")
    for n in cfg.get("sweep", "elements"):
        for method in cfg.get("sweep", "element_methods"):
            vals = per[(n, method)]
            rows.append((n, method, float(np.mean(vals)), float(np.std(vals))))
        if grid.count(cfg.topology(), n, n_tris) <= grid.budget:
            rates, _ = oracle_point(cfg, n, n_tris, snaps, grid.phase_levels)
            rows.append((n, ORACLE_METHOD, float(np.mean(rates)), float(np.std(rates))))
            detail += [(n, ORACLE_METHOD, -1, s, r, 0.0) for s, r in zip(snaps, rates)]
        else:
            logger.info("oracle skipped at n_aris=%d: enumeration exceeds budget", n)
    write_csv(run.file("sweep_elements.csv"), SWEEP_ELEMENTS_COLUMNS, rows)
    write_csv(run.file("sweep_elements_detail.csv"), ELEMENT_DETAIL_COLUMNS, detail)
    write_plot_script(run)
    run.finalize()
    return run.path, rows


def run_sweep_power(cfg: ExperimentConfig, out=None, workers=1):
    """Transmit-power x reward-design sweep of training-plateau sum rates."""
    seeds = cfg.get("sweep", "seeds")
    episodes = cfg.get("sweep", "episodes")
    run = RunDirectory(resolve_run_dir(cfg, "sweep-power", out), cfg, "sweep-power", seeds)
    cells = [(cfg, p, design, seed, episodes) for p in cfg.get("sweep", "powers_dbm")
             for design in cfg.get("sweep", "designs") for seed in seeds]
    results = parallel_map(power_cell, cells, workers)
    per = {}
    for cell, (metrics, curve) in zip(cells, results):
        _, p, design, seed, _ = cell
        per.setdefault((p, design), []).append(metrics)
        write_curve(run, seed, curve, prefix=f"p{p:g}_{design}_")
    rows = []
    for (p, design), ms in per.items():
        rates = [m["effective_sum_rate"] for m in ms]
        rows.append((float(p), design, float(np.mean(rates)), float(np.std(rates)),
                     float(np.mean([m["violation_rate"] for m in ms]))))
    write_csv(run.file("sweep_power.csv"), SWEEP_POWER_COLUMNS, rows)
    write_plot_script(run)
    run.finalize()
    return run.path, rows


# -- plotting artifact ---------------------------------------------------------------

PLOT_SCRIPT = '''"""Plot the CSV outputs in this directory (requires matplotlib).

Usage: python plot_results.py [run_dir]
"""
import csv
import glob
import os
import sys

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def main(run_dir):
    curves = sorted(glob.glob(os.path.join(run_dir, "curve_seed*.csv")))
    if curves:
        fig, ax = plt.subplots()
        for path in curves:
            r = rows(path)
            ax.plot([int(x["episode"]) for x in r], [float(x["moving_avg"]) for x in r],
                    label=os.path.basename(path)[6:-4])
        ax.set_xlabel("episode")
        ax.set_ylabel("cumulative reward (moving average)")
        ax.legend()
        fig.savefig(os.path.join(run_dir, "curves.png"), dpi=120)
    path = os.path.join(run_dir, "sweep_elements.csv")
    if os.path.exists(path):
        r = rows(path)
        fig, ax = plt.subplots()
        for method in sorted({x["method"] for x in r}):
            sel = [x for x in r if x["method"] == method]
            ax.errorbar([int(x["n_elements"]) for x in sel], [float(x["mean_sum_rate"]) for x in sel],
                        yerr=[float(x["std"]) for x in sel], marker="o", capsize=3, label=method)
        ax.set_xlabel("ARIS elements")
        ax.set_ylabel("sum rate (bit/s/Hz)")
        ax.legend()
        fig.savefig(os.path.join(run_dir, "sweep_elements.png"), dpi=120)
    path = os.path.join(run_dir, "sweep_power.csv")
    if os.path.exists(path):
        r = rows(path)
        fig, ax = plt.subplots()
        for design in sorted({x["design"] for x in r}):
            sel = [x for x in r if x["design"] == design]
            ax.errorbar([float(x["p_dbm"]) for x in sel], [float(x["mean_sum_rate"]) for x in sel],
                        yerr=[float(x["std"]) for x in sel], marker="o", capsize=3, label=design)
        ax.set_xlabel("transmit power per BS (dBm)")
        ax.set_ylabel("sum rate (bit/s/Hz)")
        ax.legend()
        fig.savefig(os.path.join(run_dir, "sweep_power.png"), dpi=120)


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else os.path.dirname(os.path.abspath(__file__)))
'''


def write_plot_script(run: RunDirectory):
    run.file("plot_results.py").write_text(PLOT_SCRIPT, encoding="utf-8")
