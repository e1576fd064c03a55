"""Experiment front end: plans, seed fan-out, ablation/noise/motivating
suites, aggregation with confidence intervals, and plot-data emission.

Directory layout: <out>/<experiment>/<mode>/<seed>/log.csv + meta.json.
Seeds are fully isolated runs and may execute as parallel processes; the
harness serializes only aggregation.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from . import tabular
from .agent import AgentConfig, config_validate, train
from .envs import make_chain_mdp
from .errors import ConfigError, FormatError
from .runlog import RunLog

PLAN_KEYS = ("name", "env", "seeds", "steps", "sigma", "out")


@dataclass
class ExperimentPlan:
    """Flat experiment description; any extra keys are agent overrides."""

    name: str
    env: str
    seeds: list[int]
    steps: int
    out: str
    sigma: float = 0.0
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError(f"seeds must be distinct, got {self.seeds}")
        if not self.seeds:
            raise ConfigError("at least one seed required")
        # surface unknown override keys immediately
        self.base_config("adaptive", self.seeds[0])

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentPlan":
        doc = dict(doc)
        try:
            name = doc.pop("name")
            env = doc.pop("env")
            seeds = [int(s) for s in doc.pop("seeds")]
            steps = int(doc.pop("steps"))
            out = doc.pop("out")
        except KeyError as e:
            raise ConfigError(f"plan is missing required key {e}") from e
        sigma = float(doc.pop("sigma", 0.0))
        return cls(name, env, seeds, steps, out, sigma, overrides=doc)

    @classmethod
    def from_file(cls, path) -> "ExperimentPlan":
        try:
            with open(path) as f:
                doc = json.load(f)
        except json.JSONDecodeError as e:
            raise FormatError(f"{path}: not valid JSON ({e})") from e
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        return {
            "name": self.name, "env": self.env, "seeds": list(self.seeds),
            "steps": self.steps, "sigma": self.sigma, "out": self.out,
            **self.overrides,
        }

    def base_config(self, gate_mode: str, seed: int) -> AgentConfig:
        raw = {
            "env": self.env, "seed": seed, "steps": self.steps,
            "action_noise": self.sigma, "gate_mode": gate_mode,
            **self.overrides,
        }
        return config_validate(raw)


def _run_seed_task(payload: dict) -> dict:
    """Worker: one fully isolated seeded run, writing log.csv and meta.json."""
    cfg = config_validate(payload["config"])
    run_dir = Path(payload["run_dir"])
    run_dir.mkdir(parents=True, exist_ok=True)
    try:
        log = train(cfg, snapshot_path=run_dir / "abort_snapshot.npz")
    except Exception as e:  # partial-failure policy: report, do not kill siblings
        (run_dir / "FAILED").write_text(f"{type(e).__name__}: {e}\n")
        return {"seed": cfg.seed, "ok": False, "error": f"{type(e).__name__}: {e}"}
    log.save_csv(run_dir / "log.csv")
    meta = {
        "config": {**asdict(cfg), "hidden": list(cfg.hidden)},
        "config_hash": cfg.hash(),
        "bc_gate0_norms": log.extras.get("bc_gate0_norms", []),
    }
    (run_dir / "meta.json").write_text(json.dumps(meta, indent=1))
    return {"seed": cfg.seed, "ok": True, "error": None}


def _mode_dir(plan: ExperimentPlan, mode: str) -> Path:
    return Path(plan.out) / plan.name / mode


def run_experiment(plan: ExperimentPlan, gate_mode: str = "adaptive",
                   workers: int = 1) -> dict:
    """One agent per seed with independent RNG streams; per-seed CSVs plus an
    aggregate JSON summary (mean and 95% normal-approx CI per checkpoint)."""
    mode_dir = _mode_dir(plan, gate_mode)
    payloads = []
    for seed in plan.seeds:
        cfg = plan.base_config(gate_mode, seed)
        payloads.append({
            "config": {**asdict(cfg), "hidden": list(cfg.hidden)},
            "run_dir": str(mode_dir / str(seed)),
        })
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers, mp_context=get_context("spawn")) as ex:
            results = list(ex.map(_run_seed_task, payloads))
    else:
        results = [_run_seed_task(p) for p in payloads]

    summary = aggregate_runs(mode_dir, plan.seeds)
    summary["experiment"] = plan.name
    summary["mode"] = gate_mode
    summary["failures"] = {str(r["seed"]): r["error"] for r in results if not r["ok"]}
    (mode_dir / "summary.json").write_text(json.dumps(summary, indent=1))
    (mode_dir / "plan.json").write_text(json.dumps(plan.to_dict(), indent=1))
    return summary


def aggregate_runs(mode_dir: Path, seeds: list[int]) -> dict:
    """Recompute per-checkpoint statistics from the per-seed CSVs on disk."""
    logs = {}
    for seed in seeds:
        path = Path(mode_dir) / str(seed) / "log.csv"
        if path.exists():
            logs[seed] = RunLog.load_csv(path)
    if not logs:
        return {"n_seeds": 0, "env_steps": [], "series": {}}
    steps = sorted({r["env_step"] for log in logs.values() for r in log.rows})
    series: dict = {}
    for col in ("eval_return_mean", "success_rate", "gate_fraction",
                "v_pi_mean", "v_mu_mean"):
        per_seed = {
            str(seed): {r["env_step"]: r[col] for r in log.rows}
            for seed, log in logs.items()
        }
        mean, ci = [], []
        for s in steps:
            vals = np.array([d[s] for d in per_seed.values() if s in d and not math.isnan(d[s])])
            if vals.size == 0:
                mean.append(math.nan)
                ci.append(math.nan)
            else:
                mean.append(float(vals.mean()))
                ci.append(float(1.96 * vals.std() / math.sqrt(vals.size)))
        series[col] = {
            "mean": mean,
            "ci95": ci,
            "per_seed": {
                k: [d.get(s, math.nan) for s in steps] for k, d in per_seed.items()
            },
        }
    return {"n_seeds": len(logs), "env_steps": steps, "series": series}


GATE_ABLATION_MODES = ("adaptive", "fixed_on", "off")


def run_ablation_suite(plan: ExperimentPlan, workers: int = 1) -> dict:
    """The three gate modes over shared seeds and env streams; emits a
    side-by-side table plus per-mode gate-fraction traces."""
    comparison = {"experiment": plan.name, "modes": {}}
    for mode in GATE_ABLATION_MODES:
        summary = run_experiment(plan, gate_mode=mode, workers=workers)
        final_return = _final(summary, "eval_return_mean")
        comparison["modes"][mode] = {
            "final_eval_return_mean": final_return,
            "final_success_rate": _final(summary, "success_rate"),
            "gate_fraction_trace": summary["series"]["gate_fraction"]["mean"],
            "env_steps": summary["env_steps"],
            "failures": summary["failures"],
        }
    table_path = Path(plan.out) / plan.name / "ablation_table.csv"
    with open(table_path, "w") as f:
        f.write("mode,final_eval_return_mean,final_success_rate,mean_gate_fraction\n")
        for mode, row in comparison["modes"].items():
            gf = row["gate_fraction_trace"]
            gf_mean = float(np.nanmean(gf)) if gf else math.nan
            f.write(f"{mode},{row['final_eval_return_mean']},{row['final_success_rate']},{gf_mean}\n")
    (Path(plan.out) / plan.name / "ablation_summary.json").write_text(
        json.dumps(comparison, indent=1)
    )
    return comparison


def decline_rate(perf_clean: float, perf_noisy: float) -> float | None:
    """(perf(0) - perf(sigma)) / perf(0), undefined when perf(0) <= 0."""
    if perf_clean is None or perf_noisy is None or math.isnan(perf_clean) or math.isnan(perf_noisy):
        return None
    if perf_clean <= 0.0:
        return None
    return (perf_clean - perf_noisy) / perf_clean


def run_noise_suite(plan: ExperimentPlan, sigmas: list[float], workers: int = 1) -> dict:
    """Action-noise robustness grid for the gated agent and its no-gate
    reduction; emits the decline-rate table."""
    if 0.0 not in sigmas:
        raise ConfigError("sigma grid must include 0 (the decline-rate baseline)")
    variants = {"gated": "adaptive", "nogate": "off"}
    perf: dict[str, dict[float, float]] = {v: {} for v in variants}
    for sigma in sigmas:
        for variant, mode in variants.items():
            sub = ExperimentPlan(
                name=f"{plan.name}/sigma_{sigma:g}", env=plan.env, seeds=plan.seeds,
                steps=plan.steps, out=plan.out, sigma=sigma,
                overrides=dict(plan.overrides),
            )
            summary = run_experiment(sub, gate_mode=mode, workers=workers)
            metric = "success_rate" if not math.isnan(_final(summary, "success_rate")) else "eval_return_mean"
            perf[variant][sigma] = _final(summary, metric)
    table = {"experiment": plan.name, "sigmas": sigmas, "performance": perf, "decline_rates": {}}
    for variant in variants:
        table["decline_rates"][variant] = {
            f"{sigma:g}": decline_rate(perf[variant][0.0], perf[variant][sigma])
            for sigma in sigmas
        }
    out_path = Path(plan.out) / plan.name / "decline_rates.json"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(json.dumps(table, indent=1))
    with open(Path(plan.out) / plan.name / "decline_rates.csv", "w") as f:
        f.write("variant,sigma,performance,decline_rate\n")
        for variant in variants:
            for sigma in sigmas:
                dr = table["decline_rates"][variant][f"{sigma:g}"]
                f.write(f"{variant},{sigma:g},{perf[variant][sigma]},"
                        f"{'' if dr is None else dr}\n")
    return table


def run_motivating_example(plan: ExperimentPlan, workers: int = 1) -> dict:
    """Train the no-gate reduction while the offline value pair fits the same
    buffer (it never acts), and report the windows where the offline value
    estimate exceeds the acting policy's; includes the exact chain-MDP study."""
    summary = run_experiment(plan, gate_mode="off", workers=workers)
    v_mu = summary["series"]["v_mu_mean"]["mean"]
    v_pi = summary["series"]["v_pi_mean"]["mean"]
    steps = summary["env_steps"]
    windows, start = [], None
    for i, (m, p) in enumerate(zip(v_mu, v_pi)):
        ahead = not (math.isnan(m) or math.isnan(p)) and m > p
        if ahead and start is None:
            start = steps[i]
        if not ahead and start is not None:
            windows.append([start, steps[i - 1]])
            start = None
    if start is not None:
        windows.append([start, steps[-1]])

    mdp = make_chain_mdp(4, gamma=0.95)
    probes = tabular.motivating_example_concurrent(
        mdp, tabular.TabularPolicy.uniform(4, 2), total_steps=4000,
        checkpoint_every=500, seed=plan.seeds[0],
    )
    final = probes[-1]
    report = {
        "experiment": plan.name,
        "offline_ahead_windows": windows,
        "env_steps": steps,
        "v_mu_mean": v_mu,
        "v_pi_mean": v_pi,
        "tabular_chain": {
            "covered": final.covered,
            "offline_dominates": final.offline_dominates,
            "v_mu": None if final.v_mu is None else final.v_mu.tolist(),
            "v_pi": None if final.v_pi is None else final.v_pi.tolist(),
        },
    }
    out_path = Path(plan.out) / plan.name / "motivating_report.json"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(json.dumps(report, indent=1))
    return report


def emit_learning_curves(experiment_dir) -> Path:
    """Tidy long-format plot data (series, x, y, y_lo, y_hi) from finished
    runs; no rendering. Idempotent."""
    experiment_dir = Path(experiment_dir)
    mode_dirs = sorted(
        d for d in experiment_dir.iterdir()
        if d.is_dir() and (d / "summary.json").exists()
    ) if experiment_dir.exists() else []
    if not mode_dirs:
        raise FormatError(f"no completed runs under {experiment_dir}")
    out_path = experiment_dir / "curves.csv"
    with open(out_path, "w") as f:
        f.write("series,x,y,y_lo,y_hi\n")
        for mode_dir in mode_dirs:
            summary = json.loads((mode_dir / "summary.json").read_text())
            steps = summary["env_steps"]
            for col in ("eval_return_mean", "success_rate", "gate_fraction"):
                mean = summary["series"][col]["mean"]
                ci = summary["series"][col]["ci95"]
                if all(isinstance(m, float) and math.isnan(m) for m in mean):
                    continue
                for x, y, h in zip(steps, mean, ci):
                    if isinstance(y, float) and math.isnan(y):
                        continue
                    f.write(f"{mode_dir.name}:{col},{x},{y},{y - h},{y + h}\n")
    return out_path


def _final(summary: dict, col: str) -> float:
    vals = summary["series"].get(col, {}).get("mean", [])
    return vals[-1] if vals else math.nan


# ------------------------------------------------------- tabular verification

def verify_tabular(seed: int = 0, n_contraction: int = 100, n_mdps: int = 50) -> list[tuple[str, bool, str]]:
    """Standalone run of the exact-DP property suite; one (name, ok, detail)
    triple per check."""
    rng = np.random.default_rng(seed)
    results = []

    worst_ratio = 0.0
    for _ in range(n_contraction):
        mdp = _random_mdp(rng)
        policy = tabular.TabularPolicy(rng.dirichlet(np.ones(mdp.n_actions), size=mdp.n_states))
        q1 = rng.normal(size=(mdp.n_states, mdp.n_actions)) * 10
        q2 = rng.normal(size=(mdp.n_states, mdp.n_actions)) * 10
        num = np.max(np.abs(tabular.bellman_expectation(mdp, policy, q1)
                            - tabular.bellman_expectation(mdp, policy, q2)))
        den = np.max(np.abs(q1 - q2))
        worst_ratio = max(worst_ratio, num / den - mdp.gamma)
    results.append((
        "contraction: sup-norm ratio <= gamma + 1e-12",
        worst_ratio <= 1e-12,
        f"worst ratio-gamma gap {worst_ratio:.3e} over {n_contraction} instances",
    ))

    mono_ok, mono_detail = True, ""
    for i in range(n_mdps):
        mdp = _random_mdp(rng)
        ds = _random_dataset(rng, mdp)
        trace = tabular.offline_boosted_policy_iteration(
            mdp, ds, beta=float(rng.uniform(0.3, 3.0)), iterations=10, grow=True
        )
        for a, b in zip(trace[:-1], trace[1:]):
            for s, ac in a.dataset_pairs:
                if b.q_pi[s, ac] < a.q_pi[s, ac] - 1e-10:
                    mono_ok = False
                    mono_detail = f"violation at mdp {i}, state {s}, action {ac}"
    results.append((
        "monotone improvement on dataset pairs (growing datasets)",
        mono_ok, mono_detail or f"{n_mdps} random MDPs clean",
    ))

    conv_ok, conv_detail = True, ""
    for i in range(n_mdps):
        mdp = _random_mdp(rng)
        full = tabular.TabularDataset.full(mdp.n_states, mdp.n_actions)
        trace = tabular.offline_boosted_policy_iteration(mdp, full, beta=1.0,
                                                         iterations=30, grow=False)
        q_star, _ = tabular.value_iteration(mdp)
        gap = float(np.max(np.abs(trace[-1].q_pi - q_star)))
        if gap > 1e-8:
            conv_ok = False
            conv_detail = f"mdp {i}: sup gap {gap:.2e}"
    results.append((
        "full-coverage convergence to the value-iteration optimum (1e-8)",
        conv_ok, conv_detail or f"{n_mdps} random MDPs clean",
    ))

    tilt_ok, worst_tv = True, 0.0
    from scipy import optimize as _opt

    for _ in range(20):
        n = int(rng.integers(2, 6))
        mu = rng.dirichlet(np.ones(n))
        q = rng.uniform(-1, 1, size=n)
        beta = float(rng.uniform(0.5, 3.0))
        w = mu * np.exp(beta * (q - q.max()))
        analytic = w / w.sum()
        eps = float(np.sum(analytic * np.log(np.maximum(analytic / mu, 1e-300))))
        if eps < 1e-12:
            continue

        def gap_fn(b, mu=mu, q=q, eps=eps):
            ww = mu * np.exp(b * (q - q.max()))
            p = ww / ww.sum()
            return float(np.sum(p * np.log(np.maximum(p / mu, 1e-300)))) - eps

        hi = 1.0
        while gap_fn(hi) < 0.0:
            hi *= 2.0
        b_hat = _opt.brentq(gap_fn, 0.0, hi, xtol=1e-14)
        ww = mu * np.exp(b_hat * (q - q.max()))
        numeric = ww / ww.sum()
        worst_tv = max(worst_tv, 0.5 * float(np.abs(numeric - analytic).sum()))
    results.append((
        "closed-form improvement matches the numerical KKT solve (1e-6 TV)",
        worst_tv < 1e-6, f"worst total variation {worst_tv:.2e}",
    ))

    m = tabular.expectile_of_set([0.0, 1.0], 0.9)
    results.append((
        "two-point expectile solves the first-order condition",
        abs(m - 0.9) < 1e-9, f"expectile({{0,1}}, 0.9) = {m:.12f}",
    ))
    return results


def _random_mdp(rng, max_states=10, max_actions=5):
    from .envs import TabularMdp

    S = int(rng.integers(2, max_states + 1))
    A = int(rng.integers(2, max_actions + 1))
    P = rng.dirichlet(np.ones(S) * rng.uniform(0.3, 2.0), size=(S, A))
    R = rng.normal(size=(S, A))
    gamma = float(rng.uniform(0.8, 0.99))
    return TabularMdp(S, A, P, R, gamma, rng.dirichlet(np.ones(S)))


def _random_dataset(rng, mdp):
    ds = tabular.TabularDataset.empty(mdp.n_states, mdp.n_actions)
    for s in range(mdp.n_states):
        k = int(rng.integers(1, mdp.n_actions + 1))
        for a in rng.choice(mdp.n_actions, size=k, replace=False):
            ds.add(s, int(a))
    return ds
