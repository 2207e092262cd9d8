"""Game-theoretic DRL: one PPO agent per task type, plus a monolithic PPO baseline.

Each GT-DRL agent sees only its own task type's view of the cloud and emits
|D| desired fractions; the per-player strategies are projected to
feasibility and combined into the cloud profile. The monolithic agent emits
all |I| x |D| logits at once and is rewarded with the cloud objective.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .accounting import OBJECTIVES, Estimator
from .drl import (
    OptState,
    PolicyParams,
    PpoConfig,
    ValueParams,
    Batch,
    agent_from_dict,
    agent_to_dict,
    forward_policy,
    forward_value,
    init_policy,
    init_value,
    ppo_update,
    sample_logits,
    softmax,
)
from .errors import MissingCheckpoint
from .game import project_batch, project_feasible
from .model import Scenario, StrategyProfile

KINDS = ("gtdrl", "ppo")
POOL_FORMAT = "geosched-pool"
POOL_VERSION = 1

# per-DC observation block
DC_FEATURES = (
    "er_share",
    "carbon_factor",
    "elec_price",
    "renewable",
    "net_meter",
    "prior_peak",
    "network_cost",
    "marginal",
)


def state_dim(n_dcs: int) -> int:
    """Observation length of one GT-DRL agent: CAR, hour sin/cos, then the per-DC block."""
    return 3 + len(DC_FEATURES) * n_dcs


# PPO settings for scheduling agents, overriding the generic defaults
TRAIN_PPO = {"lr": 1e-3, "gamma": 0.5}


@dataclass(frozen=True)
class TrainConfig:
    episodes: int = 2000
    envs: int = 8  # parallel day-long episodes per PPO batch
    car_floor: float = 0.2
    plateau_episodes: int = 50
    plateau_tol: float = 1e-3
    plateau_min_episodes: int = 1000  # no plateau stop before this many episodes
    # rewards are per-epoch objectives linked only through the peak ratchet, so a
    # short horizon keeps each agent close to its epoch-wise best reply
    ppo: PpoConfig = field(default_factory=lambda: PpoConfig(**TRAIN_PPO))

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        doc = dict(doc)
        if "ppo" in doc:
            doc["ppo"] = PpoConfig.from_dict({**TRAIN_PPO, **doc["ppo"]})
        return cls(**doc)


class Observer:
    """Builds normalized observations; normalizers are frozen at training time."""

    def __init__(self, scenario: Scenario, objective: str, car_scale=None):
        if objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")
        s = scenario
        self.scenario = s
        self.objective = objective
        er = s.execution_rates
        self.car_scale = np.asarray(car_scale if car_scale is not None else feasible_max(s), dtype=float)
        self.er_share = er / er.sum(axis=1, keepdims=True)
        cmax = float(s.carbon_factor.max())
        self.carbon = s.carbon_factor / cmax if cmax > 0 else np.zeros(s.n_dcs)
        emax = float(s.elec_price.max())
        self.price = s.elec_price / emax if emax > 0 else np.zeros_like(s.elec_price)
        self.gross = s.gross_power_max
        self.renew = np.clip(s.renewable / self.gross[:, None], -1.0, 1.0)
        nc = s.network_price * s.total_nodes[None, :] * s.task_size[:, None]
        ncm = nc.max(axis=1, keepdims=True)
        self.network = np.divide(nc, ncm, out=np.zeros_like(nc), where=ncm > 0)
        self._est: dict[int, Estimator] = {}
        self._marginal: dict[int, np.ndarray] = {}

    def estimator(self, tau: int) -> Estimator:
        h = self.scenario.hour(tau)
        if h not in self._est:
            est = Estimator(self.scenario, h)
            if self.objective == "carbon":
                m = est.carbon_coef
            else:
                m = est.linear_cost_coef + est.peak_price[None, :] * est.draw_coef
            scale = np.abs(m).max(axis=1, keepdims=True)
            self._est[h] = est
            self._marginal[h] = np.divide(m, scale, out=np.zeros_like(m), where=scale > 0)
        return self._est[h]

    def states(self, tau: int, car: np.ndarray, prior_peak: np.ndarray) -> np.ndarray:
        """Observations for every player: car (..., |I|), prior_peak (..., |D|) -> (..., |I|, n_s)."""
        s = self.scenario
        h = s.hour(tau)
        self.estimator(h)
        car = np.asarray(car, dtype=float)
        lead = car.shape[:-1]
        n_i, n_d = s.n_tasks, s.n_dcs
        pp = np.clip(np.asarray(prior_peak, dtype=float) / self.gross, 0.0, 1.0)
        pp = np.broadcast_to(pp, (*lead, n_d))
        angle = 2 * math.pi * h / s.epochs_per_day
        head = np.stack(
            [
                np.clip(car / self.car_scale, 0.0, 1.0),
                np.full(car.shape, math.sin(angle)),
                np.full(car.shape, math.cos(angle)),
            ],
            axis=-1,
        )
        per_dc = np.stack(
            [
                np.broadcast_to(self.er_share, (*lead, n_i, n_d)),
                np.broadcast_to(self.carbon, (*lead, n_i, n_d)),
                np.broadcast_to(self.price[:, h], (*lead, n_i, n_d)),
                np.broadcast_to(self.renew[:, h], (*lead, n_i, n_d)),
                np.broadcast_to(s.net_meter, (*lead, n_i, n_d)),
                np.broadcast_to(pp[..., None, :], (*lead, n_i, n_d)),
                np.broadcast_to(self.network, (*lead, n_i, n_d)),
                np.broadcast_to(self._marginal[h], (*lead, n_i, n_d)),
            ],
            axis=-1,
        )
        return np.concatenate([head, per_dc.reshape(*lead, n_i, n_d * len(DC_FEATURES))], axis=-1)

    def agent_state(self, i: int, tau: int, car_i: float, prior_peak) -> np.ndarray:
        car = np.zeros(self.scenario.n_tasks)
        car[i] = car_i
        return self.states(tau, car, prior_peak)[i]


def feasible_max(scenario: Scenario) -> np.ndarray:
    """Upper end of the training arrival-rate range, per task type."""
    return np.minimum(scenario.execution_rates.sum(axis=1), 1.5 * scenario.arrival_trace.max(axis=1))


def reward_norm(scenario: Scenario, objective: str, car_scale: np.ndarray) -> np.ndarray:
    """Per-player worst-case estimated objective over the day, used to scale rewards."""
    worst = np.zeros(scenario.n_tasks)
    for h in range(scenario.epochs_per_day):
        est = Estimator(scenario, h)
        coef = est.carbon_coef if objective == "carbon" else est.linear_cost_coef
        worst = np.maximum(worst, np.abs(coef).max(axis=1) * car_scale)
    if objective == "cost":
        worst = worst + float(np.sum(scenario.peak_price * np.abs(scenario.gross_power_max)))
    return np.where(worst > 0, worst, 1.0)


@dataclass(eq=False)
class Agent:
    policy: PolicyParams
    value: ValueParams
    opt: OptState
    nonfinite_updates: int = 0


@dataclass(eq=False)
class AgentPool:
    """Trained agents plus everything needed to rebuild observations."""

    kind: str
    objective: str
    agents: list[Agent]
    config: TrainConfig
    n_tasks: int
    n_dcs: int
    car_scale: np.ndarray
    norm: np.ndarray
    episodes_trained: int = 0
    curve: list[list[float]] = field(default_factory=list)  # per batch: mean episode reward per agent
    stopped: str = ""

    @property
    def action_dims(self) -> list[int]:
        return [a.policy.action_dim for a in self.agents]

    def observer(self, scenario: Scenario) -> Observer:
        if (scenario.n_tasks, scenario.n_dcs) != (self.n_tasks, self.n_dcs):
            raise ValueError(
                f"pool built for {self.n_tasks} tasks x {self.n_dcs} DCs, "
                f"scenario has {scenario.n_tasks} x {scenario.n_dcs}"
            )
        return Observer(scenario, self.objective, self.car_scale)


def new_pool(scenario: Scenario, objective: str, kind: str = "gtdrl", config: TrainConfig | None = None, seed: int = 0) -> AgentPool:
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")
    config = config or TrainConfig()
    rng = np.random.default_rng([seed, 0x5EED])
    n_i, n_d = scenario.n_tasks, scenario.n_dcs
    n_s = state_dim(n_d)
    if kind == "gtdrl":
        shapes = [(n_s, n_d)] * n_i
    else:
        shapes = [(n_i * n_s, n_i * n_d)]
    agents = []
    for n_in, n_out in shapes:
        pol = init_policy(n_in, n_out, config.ppo, rng)
        val = init_value(n_in, config.ppo, rng)
        agents.append(Agent(pol, val, OptState.fresh(pol, val)))
    car_scale = feasible_max(scenario)
    return AgentPool(kind, objective, agents, config, n_i, n_d, car_scale, reward_norm(scenario, objective, car_scale))


# -- allocation ------------------------------------------------------------------


def _fractions(pool: AgentPool, states: np.ndarray, mode: str, seed: int) -> np.ndarray:
    """Desired fractions (|I|, |D|) from per-player observations (|I|, n_s)."""
    n_i, n_d = pool.n_tasks, pool.n_dcs
    if pool.kind == "gtdrl":
        out = np.zeros((n_i, n_d))
        for i, agent in enumerate(pool.agents):
            if mode == "deterministic":
                _, out[i] = forward_policy(agent.policy, states[i])
            else:
                # per-player stream: the result does not depend on evaluation order
                _, f, _ = sample_logits(agent.policy, states[i][None], np.random.default_rng([seed, i]))
                out[i] = f[0]
        return out
    agent = pool.agents[0]
    flat = states.reshape(1, -1)
    if mode == "deterministic":
        logits, _ = forward_policy(agent.policy, flat[0])
    else:
        logits, _, _ = sample_logits(agent.policy, flat, np.random.default_rng([seed, 0]))
        logits = logits[0]
    return softmax(logits.reshape(n_i, n_d))


def allocate(pool: AgentPool, scenario: Scenario, tau: int, prior_peak=None, mode: str = "deterministic", seed: int = 0) -> StrategyProfile:
    if mode not in ("deterministic", "stochastic"):
        raise ValueError("mode must be 'deterministic' or 'stochastic'")
    obs = pool.observer(scenario)
    pp = np.zeros(scenario.n_dcs) if prior_peak is None else np.asarray(prior_peak, dtype=float)
    states = obs.states(tau, scenario.car(tau), pp)
    fractions = _fractions(pool, states, mode, seed)
    strategies = [project_feasible(fractions[i], i, scenario, tau) for i in range(scenario.n_tasks)]
    return StrategyProfile.from_strategies(strategies, tau)


def gtdrl_allocate(pool: AgentPool, scenario: Scenario, tau: int, prior_peak=None, objective: str | None = None,
                   mode: str = "deterministic", seed: int = 0) -> StrategyProfile:
    _check_pool(pool, "gtdrl", objective)
    return allocate(pool, scenario, tau, prior_peak, mode, seed)


def mono_ppo_allocate(pool: AgentPool, scenario: Scenario, tau: int, prior_peak=None, objective: str | None = None,
                      mode: str = "deterministic", seed: int = 0) -> StrategyProfile:
    _check_pool(pool, "ppo", objective)
    return allocate(pool, scenario, tau, prior_peak, mode, seed)


def _check_pool(pool: AgentPool, kind: str, objective: str | None) -> None:
    if pool.kind != kind:
        raise ValueError(f"expected a {kind} pool, got {pool.kind}")
    if objective is not None and objective != pool.objective:
        raise ValueError(f"pool trained for {pool.objective}, asked for {objective}")


# -- training ----------------------------------------------------------------------


def gtdrl_train(scenario: Scenario, objective: str, config: TrainConfig | None = None, episodes: int | None = None,
                seed: int = 0, pool: AgentPool | None = None) -> AgentPool:
    return train(scenario, objective, "gtdrl", config, episodes, seed, pool)


def mono_ppo_train(scenario: Scenario, objective: str, config: TrainConfig | None = None, episodes: int | None = None,
                   seed: int = 0, pool: AgentPool | None = None) -> AgentPool:
    return train(scenario, objective, "ppo", config, episodes, seed, pool)


def train(scenario: Scenario, objective: str, kind: str, config: TrainConfig | None = None, episodes: int | None = None,
          seed: int = 0, pool: AgentPool | None = None) -> AgentPool:
    """Episodic PPO training on day-long episodes with uniformly drawn arrival rates.

    All agents act in the same rollouts; each then updates on its own
    trajectories. Peers are frozen within a batch. Training stops at the
    episode budget or when the windowed mean episode reward has not improved by
    ``plateau_tol`` (relative) for ``plateau_episodes`` episodes.
    """
    config = config or (pool.config if pool else TrainConfig())
    pool = pool or new_pool(scenario, objective, kind, config, seed)
    budget = config.episodes if episodes is None else episodes
    obs = pool.observer(scenario)
    rng = np.random.default_rng([seed, pool.episodes_trained])
    er = scenario.execution_rates
    T = scenario.epochs_per_day
    n_i = scenario.n_tasks
    # plateau detection scores the deterministic policy on a fixed set of days,
    # which removes the arrival-sampling noise from the comparison
    eval_rng = np.random.default_rng([seed, 0xE7A1])
    eval_car = eval_rng.uniform(config.car_floor, 1.0, size=(T, config.envs, n_i)) * pool.car_scale
    done_eps = 0
    best = -math.inf
    last_gain = 0
    while done_eps < budget:
        E = min(config.envs, budget - done_eps)
        car = rng.uniform(config.car_floor, 1.0, size=(T, E, n_i)) * pool.car_scale
        roll = _rollout(pool, obs, car, er, rng)
        ppo = config.ppo
        means = []
        for a, agent in enumerate(pool.agents):
            sl = (slice(None), slice(None), a)
            batch = Batch.from_arrays(
                roll["states"][sl], roll["actions"][sl], roll["logp"][sl], roll["rewards"][sl],
                roll["values"][sl], roll["dones"], np.zeros(E), ppo.gamma, ppo.lambda_gae,
            )
            cfg = PpoConfig(**{**asdict(ppo), "hidden": ppo.hidden, "seed": ppo.seed + 7919 * a + seed})
            pol, val, stats = ppo_update(agent.policy, agent.value, batch, cfg, agent.opt)
            if stats.get("nonfinite"):
                agent.nonfinite_updates += 1
            agent.policy, agent.value = pol, val
            means.append(float(roll["rewards"][:, :, a].sum(axis=0).mean()))
        pool.curve.append(means)
        done_eps += E
        pool.episodes_trained += E
        score = float(_rollout(pool, obs, eval_car, er, None)["rewards"].sum(axis=0).mean())
        if not math.isfinite(best) or score > best + config.plateau_tol * abs(best):
            best, last_gain = score, done_eps
        elif done_eps - last_gain >= config.plateau_episodes and done_eps >= config.plateau_min_episodes:
            pool.stopped = f"plateau after {pool.episodes_trained} episodes"
            return pool
    pool.stopped = f"budget of {budget} episodes"
    return pool


def _rollout(pool: AgentPool, obs: Observer, car: np.ndarray, er: np.ndarray, rng: np.random.Generator | None) -> dict:
    """Run E parallel days. Arrays are (T, E, n_agents, ...). ``rng=None`` acts deterministically."""
    T, E, n_i = car.shape
    s = obs.scenario
    n_d = s.n_dcs
    n_agents = len(pool.agents)
    pp = np.zeros((E, n_d))
    out = {"states": [], "actions": [], "logp": [], "rewards": [], "values": []}
    for t in range(T):
        states = obs.states(t, car[t], pp)  # (E, I, n_s)
        est = obs.estimator(t)
        if pool.kind == "gtdrl":
            inputs = [states[:, i] for i in range(n_i)]
        else:
            inputs = [states.reshape(E, -1)]
        zs, logps, vals, fracs = [], [], [], []
        for agent, x in zip(pool.agents, inputs):
            if rng is None:
                z, f = forward_policy(agent.policy, x)
                lp = np.zeros(len(x))
            else:
                z, f, lp = sample_logits(agent.policy, x, rng)
            zs.append(z)
            logps.append(lp)
            vals.append(forward_value(agent.value, x))
            fracs.append(f)
        if pool.kind == "gtdrl":
            fractions = np.stack(fracs, axis=1)
        else:
            fractions = softmax(zs[0].reshape(E, n_i, n_d))
        ars = project_batch(fractions, car[t], er)
        player = est.batch_player_rewards(pool.objective, ars, pp)  # (E, I)
        if pool.kind == "gtdrl":
            rewards = -player / pool.norm
        else:
            rewards = -player.sum(axis=-1, keepdims=True) / pool.norm.sum()
        pp = np.maximum(pp, est.draw(ars))
        out["states"].append(np.stack(inputs, axis=1))
        out["actions"].append(np.stack(zs, axis=1))
        out["logp"].append(np.stack(logps, axis=1))
        out["rewards"].append(rewards)
        out["values"].append(np.stack(vals, axis=1))
    roll = {k: np.array(v) for k, v in out.items()}
    dones = np.zeros((T, E), dtype=bool)
    dones[-1] = True
    roll["dones"] = dones
    assert roll["rewards"].shape == (T, E, n_agents)
    return roll


# -- checkpoints -------------------------------------------------------------------


def save_pool(pool: AgentPool, directory: str | Path, scenario_name: str = "") -> Path:
    """Write a manifest plus one checkpoint file per agent."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for k, agent in enumerate(pool.agents, start=1):
        name = f"agent_{k:02d}.json"
        doc = agent_to_dict(agent.policy, agent.value, pool.config.ppo, agent.opt, nonfinite_updates=agent.nonfinite_updates)
        (directory / name).write_text(json.dumps(doc))
        files.append(name)
    manifest = {
        "format": POOL_FORMAT,
        "version": POOL_VERSION,
        "kind": pool.kind,
        "objective": pool.objective,
        "scenario": scenario_name,
        "n_tasks": pool.n_tasks,
        "n_dcs": pool.n_dcs,
        "state_dim": state_dim(pool.n_dcs),
        "dc_features": list(DC_FEATURES),
        "train_config": _train_config_dict(pool.config),
        "car_scale": pool.car_scale.tolist(),
        "norm": pool.norm.tolist(),
        "episodes_trained": pool.episodes_trained,
        "stopped": pool.stopped,
        "curve": pool.curve,
        "agents": files,
    }
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1))
    return path


def load_pool(directory: str | Path) -> AgentPool:
    directory = Path(directory)
    path = directory / "manifest.json"
    if not path.exists():
        raise MissingCheckpoint(f"no manifest.json in {directory}")
    m = json.loads(path.read_text())
    if m.get("format") != POOL_FORMAT or m.get("version") != POOL_VERSION:
        raise MissingCheckpoint(f"{path}: not a geosched agent pool")
    agents = []
    for name in m["agents"]:
        f = directory / name
        if not f.exists():
            raise MissingCheckpoint(f"missing agent checkpoint {f}")
        pol, val, _, opt, meta = agent_from_dict(json.loads(f.read_text()))
        agents.append(Agent(pol, val, opt or OptState.fresh(pol, val), meta.get("nonfinite_updates", 0)))
    return AgentPool(
        kind=m["kind"],
        objective=m["objective"],
        agents=agents,
        config=TrainConfig.from_dict(m["train_config"]),
        n_tasks=m["n_tasks"],
        n_dcs=m["n_dcs"],
        car_scale=np.array(m["car_scale"], dtype=float),
        norm=np.array(m["norm"], dtype=float),
        episodes_trained=m["episodes_trained"],
        curve=m["curve"],
        stopped=m.get("stopped", ""),
    )


def _train_config_dict(config: TrainConfig) -> dict:
    doc = asdict(config)
    doc["ppo"]["hidden"] = list(config.ppo.hidden)
    return doc
