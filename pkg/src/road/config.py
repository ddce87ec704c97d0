"""Experiment configuration schema."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Annotated, Literal, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from road.bandit import DEFAULT_ARMS, DEFAULT_C, DEFAULT_WINDOW


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ChainMdpSpec(_Strict):
    kind: Literal["chain"] = "chain"
    n_cells: int = Field(10, ge=3)
    step_reward: float = -1.0
    goal_reward: float = 10.0
    discount: float = Field(0.9, gt=0, lt=1)


class FileMdpSpec(_Strict):
    kind: Literal["file"] = "file"
    path: str


class InlineMdpSpec(_Strict):
    kind: Literal["inline"] = "inline"
    n_states: int
    n_actions: int
    transition: list[list[list[float]]]
    reward: list[list[float]]
    initial_dist: list[float]
    discount: float
    terminal: list[bool] | None = None


MdpSpec = Annotated[Union[ChainMdpSpec, FileMdpSpec, InlineMdpSpec], Field(discriminator="kind")]


class ConstantPolicySpec(_Strict):
    kind: Literal["constant"] = "constant"
    action: int = Field(ge=0)


class UniformPolicySpec(_Strict):
    kind: Literal["uniform"] = "uniform"


class OptimalPolicySpec(_Strict):
    kind: Literal["optimal"] = "optimal"


class TablePolicySpec(_Strict):
    kind: Literal["table"] = "table"
    probs: list[list[float]]


PolicySpec = Annotated[Union[ConstantPolicySpec, UniformPolicySpec, OptimalPolicySpec, TablePolicySpec],
                       Field(discriminator="kind")]


class WeightedPolicy(_Strict):
    policy: PolicySpec
    weight: float = Field(ge=0)


class OfflineDataSpec(_Strict):
    policies: list[WeightedPolicy] | None = None
    n_steps: int = Field(1000, ge=1)
    max_episode_steps: int = Field(100, ge=1)
    path: str | None = None
    label: str | None = None

    @model_validator(mode="after")
    def _one_source(self):
        if (self.policies is None) == (self.path is None):
            raise ValueError("offline_data needs exactly one of 'policies' or 'path'")
        if self.policies is not None:
            if not self.policies:
                raise ValueError("offline_data.policies must be non-empty")
            total = sum(p.weight for p in self.policies)
            if abs(total - 1.0) > 1e-9:
                raise ValueError(f"offline policy weights must sum to 1, got {total}")
        return self


class PeriodSpec(_Strict):
    kind: Literal["episode", "steps"] = "episode"
    length: int | None = Field(None, ge=1)

    @model_validator(mode="after")
    def _length(self):
        if self.kind == "steps" and self.length is None:
            raise ValueError("period.length is required when kind is 'steps'")
        return self


class FixedSpec(_Strict):
    kind: Literal["fixed"] = "fixed"
    m: float = Field(ge=0, le=1)


class DecreasingSpec(_Strict):
    kind: Literal["decreasing"] = "decreasing"
    m_high: float = Field(0.5, ge=0, le=1)
    m_low: float = Field(0.1, ge=0, le=1)


class UniformSpec(_Strict):
    kind: Literal["uniform"] = "uniform"


class BalancedReplaySpec(_Strict):
    kind: Literal["balanced_replay"] = "balanced_replay"
    smoothing: float = Field(1e-3, gt=0)


class RoadSpec(_Strict):
    kind: Literal["road"] = "road"


StrategySpec = Annotated[Union[FixedSpec, DecreasingSpec, UniformSpec, BalancedReplaySpec, RoadSpec],
                         Field(discriminator="kind")]


def strategy_label(spec) -> str:
    if spec.kind == "fixed":
        return f"fixed({spec.m:g})"
    return spec.kind


class AgentSpec(_Strict):
    learning_rate: float = Field(1e-3, gt=0)
    discount: float = Field(0.9, gt=0, lt=1)
    inv_temperature: float = Field(1.0, gt=0)
    epsilon: float = Field(0.1, ge=0, le=1)
    batch_size: int = Field(256, ge=1)
    updates_per_step: int = Field(1, ge=1)
    policy: Literal["epsilon_greedy", "softmax"] = "epsilon_greedy"


class SurrogateSpec(_Strict):
    kappa: float = Field(1.0, ge=0)
    batch_size: int = Field(256, ge=1)
    action_expectation: Literal["exact", "sampled"] = "exact"


class BanditSpec(_Strict):
    arms: list[float] = Field(default_factory=lambda: list(DEFAULT_ARMS), min_length=1)
    c: float = Field(DEFAULT_C, ge=0)
    window: int | Literal["growing"] = DEFAULT_WINDOW

    @field_validator("arms")
    @classmethod
    def _arms(cls, v):
        if any(not 0 <= a <= 1 for a in v) or len(set(v)) != len(v):
            raise ValueError("arms must be distinct ratios in [0, 1]")
        return v

    @field_validator("window")
    @classmethod
    def _window(cls, v):
        if v != "growing" and v < 1:
            raise ValueError("window must be >= 1 or 'growing'")
        return v


class EvalSpec(_Strict):
    rollouts: int = Field(20, ge=1)
    interval: int = Field(1, ge=1)
    max_steps: int = Field(100, ge=1)
    final_window: int = Field(10, ge=1)


class ExperimentConfig(_Strict):
    name: str = "experiment"
    mdp: MdpSpec = Field(default_factory=ChainMdpSpec)
    offline_data: OfflineDataSpec
    offline_pretrain_steps: int = Field(1000, ge=0)
    online_steps: int = Field(1000, ge=1)
    period: PeriodSpec = Field(default_factory=PeriodSpec)
    max_episode_steps: int = Field(100, ge=1)
    buffer_capacity: int = Field(1_000_000, ge=1)
    strategy: StrategySpec
    agent: AgentSpec = Field(default_factory=AgentSpec)
    surrogate: SurrogateSpec = Field(default_factory=SurrogateSpec)
    bandit: BanditSpec = Field(default_factory=BanditSpec)
    eval: EvalSpec = Field(default_factory=EvalSpec)
    heatmap_bucket: int = Field(10, ge=1)
    seeds: list[int] = Field(default_factory=lambda: [0, 1, 2, 3], min_length=1)
    output_dir: str = "runs"

    @property
    def label(self) -> str:
        return strategy_label(self.strategy)

    def with_strategy(self, strategy: dict | BaseModel, **overrides) -> "ExperimentConfig":
        doc = self.model_dump()
        doc["strategy"] = strategy if isinstance(strategy, dict) else strategy.model_dump()
        doc.update(overrides)
        return ExperimentConfig.model_validate(doc)

    def with_updates(self, **overrides) -> "ExperimentConfig":
        doc = self.model_dump()
        doc.update(overrides)
        return ExperimentConfig.model_validate(doc)


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    cfg = ExperimentConfig.model_validate(json.loads(path.read_text()))
    # relative file references resolve against the config's directory
    base = path.resolve().parent
    updates = {}
    if cfg.mdp.kind == "file" and not Path(cfg.mdp.path).is_absolute():
        updates["mdp"] = {"kind": "file", "path": str(base / cfg.mdp.path)}
    if cfg.offline_data.path and not Path(cfg.offline_data.path).is_absolute():
        data = cfg.offline_data.model_dump(exclude_none=True)
        updates["offline_data"] = {**data, "path": str(base / cfg.offline_data.path)}
    return cfg.with_updates(**updates) if updates else cfg
