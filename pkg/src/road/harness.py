"""Offline pretraining, online fine-tuning with a mixing strategy, and metric export."""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from road.agent import (AgentConfig, OfflineDataset, epsilon_greedy_policy, generate_offline_dataset,
                        q_learning_batch_update, softmax_policy)
from road.bandit import BanditState, ucb_values
from road.config import ExperimentConfig
from road.mdp import (Mdp, build_chain_mdp, exact_occupancy, greedy_policy, normalized_score, return_bounds,
                      rollout, sample_action, sample_initial_state, step, value_iteration)
from road.replay import (BalancedReplay, Decreasing, Fixed, MixingDirective, OnlineBuffer, Road, Uniform,
                         sample_mixed, sample_offline, sample_weighted)
from road.surrogate import SurrogateConfig, period_stats

CURVE_FIELDS = ["strategy", "seed", "period", "start_step", "steps", "selected_m", "offline_fraction",
                "delta_off", "delta_on", "r_q", "eval_return", "eval_score"]


class ExperimentError(RuntimeError):
    """A run could not proceed; carries a short machine-readable reason."""

    def __init__(self, reason: str, message: str):
        super().__init__(message)
        self.reason = reason


@dataclass
class PeriodRow:
    period: int
    start_step: int
    steps: int
    selected_m: float
    offline_fraction: float
    delta_off: float
    delta_on: float
    r_q: float
    eval_return: float = math.nan
    eval_score: float = math.nan
    ucb: list[float] | None = None


@dataclass
class RunRecord:
    strategy: str
    seed: int
    rows: list[PeriodRow]
    final_return: float
    final_score: float
    arms: list[float] = field(default_factory=list)
    config_name: str = ""
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "RunRecord":
        doc = dict(doc)
        doc["rows"] = [PeriodRow(**r) for r in doc["rows"]]
        return cls(**doc)


def build_mdp(cfg: ExperimentConfig) -> Mdp:
    spec = cfg.mdp
    if spec.kind == "chain":
        return build_chain_mdp(spec.n_cells, spec.step_reward, spec.goal_reward, spec.discount)
    if spec.kind == "file":
        return Mdp.from_json(spec.path)
    return Mdp.from_dict(spec.model_dump())


def build_policy(spec, mdp: Mdp) -> np.ndarray:
    if spec.kind == "constant":
        if spec.action >= mdp.n_actions:
            raise ValueError(f"constant policy action {spec.action} out of range")
        probs = np.zeros(mdp.shape)
        probs[:, spec.action] = 1.0
        return probs
    if spec.kind == "uniform":
        return np.full(mdp.shape, 1.0 / mdp.n_actions)
    if spec.kind == "optimal":
        return greedy_policy(value_iteration(mdp))
    return np.asarray(spec.probs, dtype=float)


def build_offline_dataset(cfg: ExperimentConfig, mdp: Mdp, rng: np.random.Generator, seed: int) -> OfflineDataset:
    spec = cfg.offline_data
    if spec.path is not None:
        data = OfflineDataset.from_csv(spec.path)
    else:
        policies = [(build_policy(p.policy, mdp), p.weight) for p in spec.policies]
        label = spec.label or " + ".join(f"{p.weight:g}*{p.policy.kind}" for p in spec.policies)
        data = generate_offline_dataset(mdp, policies, spec.n_steps, rng, label=label,
                                        max_episode_steps=spec.max_episode_steps, seed=seed)
    data.validate_for(mdp)
    return data


def build_strategy(cfg: ExperimentConfig, rng: np.random.Generator):
    spec = cfg.strategy
    if spec.kind == "fixed":
        return Fixed(spec.m)
    if spec.kind == "decreasing":
        # episodic periods have no known count, so the schedule runs over environment steps
        total = cfg.online_steps if cfg.period.kind == "episode" else math.ceil(cfg.online_steps / cfg.period.length)
        return Decreasing(spec.m_high, spec.m_low, total)
    if spec.kind == "uniform":
        return Uniform(cfg.bandit.arms, rng)
    if spec.kind == "balanced_replay":
        return BalancedReplay(spec.smoothing)
    window = None if cfg.bandit.window == "growing" else cfg.bandit.window
    return Road(BanditState(tuple(cfg.bandit.arms), window, cfg.bandit.c))


def current_policy(cfg: ExperimentConfig, q: np.ndarray) -> np.ndarray:
    if cfg.agent.policy == "softmax":
        return softmax_policy(q, cfg.agent.inv_temperature)
    return epsilon_greedy_policy(q, cfg.agent.epsilon)


def evaluate_greedy(mdp: Mdp, q: np.ndarray, rollouts: int, max_steps: int, rng: np.random.Generator) -> float:
    policy = greedy_policy(q)
    return float(np.mean([rollout(mdp, policy, max_steps, rng).discounted_return for _ in range(rollouts)]))


def run_seed(cfg: ExperimentConfig, seed: int) -> RunRecord:
    """One full offline-then-online run; deterministic in (cfg, seed)."""
    started = time.perf_counter()
    data_rng, pretrain_rng, env_rng, replay_rng, strat_rng, eval_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(6))
    mdp = build_mdp(cfg)
    bounds = return_bounds(mdp)
    offline = build_offline_dataset(cfg, mdp, data_rng, seed)
    agent = AgentConfig(cfg.agent.learning_rate, cfg.agent.discount, cfg.agent.inv_temperature, cfg.agent.epsilon)
    surrogate = SurrogateConfig(cfg.surrogate.kappa, cfg.surrogate.batch_size, cfg.surrogate.action_expectation)
    batch_size = cfg.agent.batch_size

    q = np.zeros(mdp.shape)
    for _ in range(cfg.offline_pretrain_steps):
        batch = sample_offline(offline, batch_size, pretrain_rng)
        q = _update(q, batch, agent, f"offline pretraining (seed {seed})")

    strategy = build_strategy(cfg, strat_rng)
    buffer = OnlineBuffer(cfg.buffer_capacity)
    rows: list[PeriodRow] = []
    steps_done = 0
    state, episode_steps = None, 0
    period = 0
    while steps_done < cfg.online_steps:
        policy = current_policy(cfg, q)
        context = {}
        if isinstance(strategy, BalancedReplay):
            context = {"offline": offline, "online": buffer, "occupancy": exact_occupancy(mdp, policy)}
        ucb = ucb_values(strategy.bandit) if isinstance(strategy, Road) else None
        index = steps_done if isinstance(strategy, Decreasing) and cfg.period.kind == "episode" else period
        directive = strategy.next_directive(index, **context)
        # balanced replay samples from the union as it stood when the directive was issued
        frozen_len = len(buffer)

        start = steps_done
        n_offline = n_total = 0
        while True:
            if state is None:
                state, episode_steps = sample_initial_state(mdp, env_rng), 0
            t = step(mdp, state, sample_action(policy, state, env_rng), env_rng)
            buffer.push(t)
            steps_done += 1
            episode_steps += 1
            for _ in range(cfg.agent.updates_per_step):
                batch = _draw_training_batch(directive, offline, buffer, frozen_len, batch_size, replay_rng)
                n_offline += int(batch.offline.sum())
                n_total += len(batch)
                q = _update(q, batch, agent, f"period {period} (seed {seed})")
            policy = current_policy(cfg, q)
            episode_over = t.done or episode_steps >= cfg.max_episode_steps
            state = None if episode_over else t.next_state
            if steps_done >= cfg.online_steps:
                break
            if cfg.period.kind == "episode" and episode_over:
                break
            if cfg.period.kind == "steps" and steps_done - start >= cfg.period.length:
                break

        stats = period_stats(q, policy, offline, buffer, surrogate, replay_rng)
        strategy.observe(directive, stats.r_q)
        row = PeriodRow(period, start, steps_done - start,
                        directive.ratio if directive.ratio is not None else math.nan,
                        n_offline / n_total, stats.delta_off, stats.delta_on, stats.r_q, ucb=ucb)
        last = steps_done >= cfg.online_steps
        if (period + 1) % cfg.eval.interval == 0 or last:
            row.eval_return = evaluate_greedy(mdp, q, cfg.eval.rollouts, cfg.eval.max_steps, eval_rng)
            row.eval_score = normalized_score(row.eval_return, bounds)
        rows.append(row)
        period += 1

    evals = [r for r in rows if not math.isnan(r.eval_return)][-cfg.eval.final_window:]
    arms = list(cfg.bandit.arms) if cfg.strategy.kind in ("road", "uniform") else []
    return RunRecord(cfg.label, seed, rows,
                     float(np.mean([r.eval_return for r in evals])),
                     float(np.mean([r.eval_score for r in evals])),
                     arms, cfg.name, time.perf_counter() - started)


def _update(q, batch, agent, where):
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            return q_learning_batch_update(q, batch, agent)
    except FloatingPointError:
        raise ExperimentError("non_finite_q", f"non-finite Q values during {where}") from None


def _draw_training_batch(directive: MixingDirective, offline, buffer, frozen_len, batch_size, rng):
    if directive.ratio is not None:
        return sample_mixed(offline, buffer, directive.ratio, batch_size, rng)
    return sample_weighted(offline, _FrozenView(buffer, frozen_len), directive.weights, batch_size, rng)


class _FrozenView:
    """Read-only view of the ``n`` oldest retained elements of a buffer."""

    def __init__(self, buffer: OnlineBuffer, n: int):
        self._buffer, self._n = buffer, n

    def __len__(self) -> int:
        return self._n

    def contents(self):
        return self._buffer.take(np.arange(self._n))


def run_experiment(cfg: ExperimentConfig, seeds: Sequence[int] | None = None, workers: int = 1) -> list[RunRecord]:
    """One record per seed, in seed order. Seeds share no state, so ``workers > 1`` runs them in processes."""
    seeds = list(cfg.seeds if seeds is None else seeds)
    if workers <= 1 or len(seeds) <= 1:
        return [run_seed(cfg, s) for s in seeds]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_seed, [cfg] * len(seeds), seeds))


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return "" if math.isnan(x) else repr(x)
    return str(x)


def summarize(records: Sequence[RunRecord]) -> dict:
    """Per-strategy mean and standard deviation of final returns and scores across seeds."""
    out: dict[str, dict] = {}
    for label in dict.fromkeys(r.strategy for r in records):
        group = [r for r in records if r.strategy == label]
        returns = np.array([r.final_return for r in group])
        scores = np.array([r.final_score for r in group])
        n = len(group)
        out[label] = {
            "n_seeds": n,
            "seeds": [r.seed for r in group],
            "final_return_mean": float(returns.mean()),
            "final_return_std": float(returns.std(ddof=1)) if n > 1 else 0.0,
            "final_score_mean": float(scores.mean()),
            "final_score_std": float(scores.std(ddof=1)) if n > 1 else 0.0,
            "final_score_se": float(scores.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0,
        }
    return out


def heatmap_counts(records: Sequence[RunRecord], bucket: int) -> tuple[list[float], list[list[int]]]:
    """Selection counts per (period bucket, arm), pooled over records."""
    arms = sorted({r.selected_m for rec in records for r in rec.rows if not math.isnan(r.selected_m)})
    n_periods = max((len(rec.rows) for rec in records), default=0)
    n_buckets = math.ceil(n_periods / bucket) if n_periods else 0
    counts = [[0] * len(arms) for _ in range(n_buckets)]
    col = {a: i for i, a in enumerate(arms)}
    for rec in records:
        for r in rec.rows:
            if not math.isnan(r.selected_m):
                counts[r.period // bucket][col[r.selected_m]] += 1
    return arms, counts


def export_metrics(records: Sequence[RunRecord], out_dir: str | Path, bucket: int = 10,
                   figures: bool = True) -> dict[str, Path]:
    if not records:
        raise ValueError("no records to export")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ExperimentError("unwritable_output", f"cannot create {out}: {exc}") from exc
    paths = {"curves": out / "curves.csv", "heatmap": out / "heatmap.csv", "summary": out / "summary.json",
             "records": out / "records.json"}
    with paths["curves"].open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_FIELDS)
        for rec in records:
            for r in rec.rows:
                w.writerow([rec.strategy, rec.seed, r.period, r.start_step, r.steps] +
                           [_fmt(getattr(r, f)) for f in CURVE_FIELDS[5:]])
    arms, counts = heatmap_counts(records, bucket)
    with paths["heatmap"].open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bucket", "period_start", "period_end"] + [f"m={a:g}" for a in arms])
        for b, row in enumerate(counts):
            w.writerow([b, b * bucket, (b + 1) * bucket - 1] + row)
    bandit_rows = [(rec, r) for rec in records for r in rec.rows if r.ucb is not None]
    if bandit_rows:
        paths["bandit"] = out / "bandit.csv"
        arm_labels = bandit_rows[0][0].arms
        with paths["bandit"].open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["strategy", "seed", "period", "selected_m", "r_q"] + [f"ucb_m={a:g}" for a in arm_labels])
            for rec, r in bandit_rows:
                w.writerow([rec.strategy, rec.seed, r.period, _fmt(r.selected_m), _fmt(r.r_q)] +
                           [_fmt(float(u)) for u in r.ucb])
    paths["summary"].write_text(json.dumps(summarize(records), indent=2) + "\n")
    paths["records"].write_text(json.dumps([to_jsonable(r.to_dict()) for r in records]) + "\n")
    if figures:
        from road.plotting import plot_curves, plot_heatmap

        paths["curves_png"] = plot_curves(records, out / "curves.png")
        if arms:
            paths["heatmap_png"] = plot_heatmap(arms, counts, bucket, out / "heatmap.png")
    return paths


def to_jsonable(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    if isinstance(obj, dict):
        return {k: to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return to_jsonable(obj.item())
    return obj


def from_jsonable(obj):
    if obj is None:
        return math.nan
    if obj == "inf":
        return math.inf
    if obj == "-inf":
        return -math.inf
    return obj


def load_records(run_dir: str | Path) -> list[RunRecord]:
    docs = json.loads((Path(run_dir) / "records.json").read_text())
    records = []
    for doc in docs:
        for row in doc["rows"]:
            for k, v in row.items():
                if k == "ucb":
                    row[k] = None if v is None else [from_jsonable(u) for u in v]
                elif v is None or isinstance(v, str):
                    row[k] = from_jsonable(v)
        records.append(RunRecord.from_dict(doc))
    return records


def compare_strategies(cfgs: Sequence[ExperimentConfig], seeds: Sequence[int] | None = None,
                       workers: int = 1) -> dict:
    """Run each config and tabulate final scores, flagging the best fixed ratio and the best overall."""
    if not cfgs:
        raise ValueError("need at least one config")
    base = cfgs[0]
    for cfg in cfgs[1:]:
        if cfg.mdp != base.mdp or cfg.offline_data != base.offline_data:
            raise ExperimentError("mismatched_environment", "compared configs must share mdp and offline_data")
    rows, records = [], []
    for cfg in cfgs:
        recs = run_experiment(cfg, seeds, workers)
        records.extend(recs)
        s = summarize(recs)[cfg.label]
        rows.append({"strategy": cfg.label, "config": cfg.name, **s})
    fixed = [r for r in rows if r["strategy"].startswith("fixed(")]
    best_fixed = max((r["final_score_mean"] for r in fixed), default=None)
    best = max(r["final_score_mean"] for r in rows)
    for r in rows:
        r["best_fixed"] = best_fixed is not None and r in fixed and r["final_score_mean"] == best_fixed
        r["best_overall"] = r["final_score_mean"] == best
    return {"rows": rows, "records": records}


def write_comparison(table: dict, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = table["rows"]
    fields = ["strategy", "config", "n_seeds", "final_score_mean", "final_score_std", "final_score_se",
              "final_return_mean", "final_return_std", "best_fixed", "best_overall"]
    paths = {"comparison_csv": out / "comparison.csv", "comparison_json": out / "comparison.json"}
    with paths["comparison_csv"].open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for r in rows:
            w.writerow([_fmt(r[f]) for f in fields])
    paths["comparison_json"].write_text(json.dumps(rows, indent=2) + "\n")
    paths.update(export_metrics(table["records"], out))
    return paths
