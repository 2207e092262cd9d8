"""Small actor-critic networks and PPO, in plain numpy.

Both networks are 2-hidden-layer tanh MLPs. The actor outputs mean logits;
exploration adds Gaussian noise with a learned per-dimension log standard
deviation before a softmax maps the sample onto the simplex. Gradients are
written out by hand (reverse mode) and checked against finite differences in
the test suite.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import BatchConsumed, MissingCheckpoint, NonFiniteParams

LOG_STD_MIN = -20.0
LOG_2PI = math.log(2.0 * math.pi)
CHECKPOINT_FORMAT = "geosched-ppo"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class PpoConfig:
    clip_eps: float = 0.2
    gamma: float = 0.99
    lambda_gae: float = 0.95
    lr: float = 3e-4
    epochs_per_update: int = 10
    minibatch: int = 64
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    grad_clip_norm: float = 0.5
    hidden: tuple[int, ...] = (64, 64)
    init_log_std: float = -0.5
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.clip_eps < 1:
            raise ValueError("clip_eps must lie in (0, 1)")
        if not (0 < self.gamma <= 1 and 0 < self.lambda_gae <= 1):
            raise ValueError("gamma and lambda_gae must lie in (0, 1]")
        if self.lr <= 0 or self.epochs_per_update < 1 or self.minibatch < 1:
            raise ValueError("lr, epochs_per_update and minibatch must be positive")

    @classmethod
    def from_dict(cls, doc: dict) -> "PpoConfig":
        doc = dict(doc)
        if "hidden" in doc:
            doc["hidden"] = tuple(doc["hidden"])
        return cls(**doc)


# -- networks ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Params:
    """Named parameter arrays of an MLP: W0, b0, W1, b1, ... (plus extras)."""

    sizes: tuple[int, ...]
    arrays: dict[str, np.ndarray]

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def replace(self, arrays: dict[str, np.ndarray]) -> "Params":
        return type(self)(self.sizes, arrays)

    def copy(self) -> "Params":
        return self.replace({k: v.copy() for k, v in self.arrays.items()})

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.arrays.values())


class PolicyParams(Params):
    @property
    def log_std(self) -> np.ndarray:
        return self.arrays["log_std"]

    @property
    def action_dim(self) -> int:
        return self.sizes[-1]


class ValueParams(Params):
    pass


def _layer_init(rng: np.random.Generator, n_in: int, n_out: int, gain: float) -> np.ndarray:
    # orthogonal init, the usual choice for small PPO nets
    a = rng.standard_normal((max(n_in, n_out), min(n_in, n_out)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    w = q if n_in >= n_out else q.T
    return gain * w[:n_in, :n_out]


def _mlp_arrays(rng, sizes, out_gain: float) -> dict[str, np.ndarray]:
    arrays = {}
    for k, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        last = k == len(sizes) - 2
        gain = out_gain if last else math.sqrt(2.0)
        arrays[f"W{k}"] = _layer_init(rng, n_in, n_out, gain) if gain > 0 else np.zeros((n_in, n_out))
        arrays[f"b{k}"] = np.zeros(n_out)
    return arrays


def init_policy(n_state: int, n_action: int, config: PpoConfig, rng: np.random.Generator) -> PolicyParams:
    """Fresh actor. The output layer starts at zero, so the initial policy is uniform."""
    sizes = (n_state, *config.hidden, n_action)
    arrays = _mlp_arrays(rng, sizes, out_gain=0.0)
    arrays["log_std"] = np.full(n_action, config.init_log_std)
    return PolicyParams(sizes, arrays)


def init_value(n_state: int, config: PpoConfig, rng: np.random.Generator) -> ValueParams:
    sizes = (n_state, *config.hidden, 1)
    return ValueParams(sizes, _mlp_arrays(rng, sizes, out_gain=1.0))


def mlp_forward(params: Params, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Returns the linear output and the activations needed for backprop."""
    h = np.atleast_2d(np.asarray(x, dtype=float))
    acts = [h]
    a = params.arrays
    for k in range(params.n_layers):
        z = h @ a[f"W{k}"] + a[f"b{k}"]
        h = np.tanh(z) if k < params.n_layers - 1 else z
        acts.append(h)
    return h, acts


def mlp_backward(params: Params, acts: list[np.ndarray], grad_out: np.ndarray) -> dict[str, np.ndarray]:
    a = params.arrays
    grads = {}
    g = grad_out
    for k in reversed(range(params.n_layers)):
        h_in = acts[k]
        grads[f"W{k}"] = h_in.T @ g
        grads[f"b{k}"] = g.sum(axis=0)
        if k > 0:
            g = (g @ a[f"W{k}"].T) * (1.0 - acts[k] ** 2)
    return grads


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward_policy(params: PolicyParams, state) -> tuple[np.ndarray, np.ndarray]:
    """Mean logits and their softmax fractions (deterministic action)."""
    if not params.is_finite():
        raise NonFiniteParams("policy parameters contain NaN or inf")
    state = np.asarray(state, dtype=float)
    logits, _ = mlp_forward(params, state)
    if state.ndim == 1:
        logits = logits[0]
    return logits, softmax(logits)


def forward_value(params: ValueParams, states) -> np.ndarray:
    out, _ = mlp_forward(params, states)
    return out[:, 0]


def _log_std(params: PolicyParams) -> np.ndarray:
    return np.maximum(params.log_std, LOG_STD_MIN)


def gaussian_log_prob(z: np.ndarray, mean: np.ndarray, log_std: np.ndarray) -> np.ndarray:
    std = np.exp(log_std)
    return np.sum(-0.5 * ((z - mean) / std) ** 2 - log_std - 0.5 * LOG_2PI, axis=-1)


def entropy(params: PolicyParams) -> float:
    return float(np.sum(_log_std(params) + 0.5 * (LOG_2PI + 1.0)))


def sample_logits(
    params: PolicyParams, states: np.ndarray, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batched stochastic action: (logit samples z, fractions, log-probs)."""
    mean, _ = mlp_forward(params, states)
    log_std = _log_std(params)
    z = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
    return z, softmax(z), gaussian_log_prob(z, mean, log_std)


def sample_action(params: PolicyParams, state, seed: int) -> tuple[np.ndarray, float]:
    if not params.is_finite():
        raise NonFiniteParams("policy parameters contain NaN or inf")
    _, fractions, logp = sample_logits(params, np.atleast_2d(state), np.random.default_rng(seed))
    return fractions[0], float(logp[0])


# -- advantages ---------------------------------------------------------------


@dataclass
class Trajectory:
    states: list = field(default_factory=list)
    actions: list = field(default_factory=list)  # logit samples z
    fractions: list = field(default_factory=list)
    log_probs: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    values: list = field(default_factory=list)
    dones: list = field(default_factory=list)
    last_value: float = 0.0  # bootstrap value after the final step

    def add(self, state, action, fractions, log_prob, reward, value, done) -> None:
        self.states.append(state)
        self.actions.append(action)
        self.fractions.append(fractions)
        self.log_probs.append(log_prob)
        self.rewards.append(reward)
        self.values.append(value)
        self.dones.append(done)

    def __len__(self) -> int:
        return len(self.rewards)


def gae(rewards, values, dones, gamma: float, lam: float, last_value: float = 0.0):
    """Generalized advantage estimates and value targets (not normalized).

    ``dones[t]`` marks that the episode ended after step t, cutting the
    bootstrap from the next state.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=bool)
    n = len(rewards)
    if n == 0:
        raise ValueError("empty trajectory")
    adv = np.zeros(n)
    running = 0.0
    for t in reversed(range(n)):
        next_value = last_value if t == n - 1 else values[t + 1]
        live = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * next_value * live - values[t]
        running = delta + gamma * lam * live * running
        adv[t] = running
    return adv, adv + values


def normalize(adv: np.ndarray) -> np.ndarray:
    return (adv - adv.mean()) / max(float(adv.std()), 1e-8)


@dataclass(eq=False)
class Batch:
    """On-policy samples for one update; usable exactly once."""

    states: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray
    consumed: bool = False

    def __len__(self) -> int:
        return len(self.returns)

    @classmethod
    def from_trajectories(cls, trajs, gamma: float, lam: float, normalize_adv: bool = True) -> "Batch":
        advs, rets = [], []
        for tr in trajs:
            a, r = gae(tr.rewards, tr.values, tr.dones, gamma, lam, tr.last_value)
            advs.append(a)
            rets.append(r)
        adv = np.concatenate(advs)
        return cls(
            states=np.array([s for tr in trajs for s in tr.states], dtype=float),
            actions=np.array([a for tr in trajs for a in tr.actions], dtype=float),
            log_probs=np.array([p for tr in trajs for p in tr.log_probs], dtype=float),
            advantages=normalize(adv) if normalize_adv else adv,
            returns=np.concatenate(rets),
        )

    @classmethod
    def from_arrays(cls, states, actions, log_probs, rewards, values, dones, last_values, gamma, lam) -> "Batch":
        """Build from (T, E, ...) rollout arrays of E parallel episodes."""
        T, E = rewards.shape
        adv = np.zeros((T, E))
        ret = np.zeros((T, E))
        for e in range(E):
            adv[:, e], ret[:, e] = gae(rewards[:, e], values[:, e], dones[:, e], gamma, lam, last_values[e])
        flat = lambda x: x.reshape(T * E, *x.shape[2:])  # noqa: E731
        return cls(
            states=flat(states),
            actions=flat(actions),
            log_probs=flat(log_probs),
            advantages=normalize(flat(adv)),
            returns=flat(ret),
        )


# -- losses and gradients -------------------------------------------------------


def policy_loss_and_grad(params: PolicyParams, states, actions, old_log_probs, advantages, config: PpoConfig):
    """Clipped-surrogate loss (to minimize) minus the entropy bonus, and its gradient."""
    n = len(advantages)
    mean, acts = mlp_forward(params, states)
    log_std = _log_std(params)
    std = np.exp(log_std)
    logp = gaussian_log_prob(actions, mean, log_std)
    ratio = np.exp(logp - old_log_probs)
    clipped = np.clip(ratio, 1.0 - config.clip_eps, 1.0 + config.clip_eps)
    unclipped_obj = ratio * advantages
    clipped_obj = clipped * advantages
    surrogate = np.minimum(unclipped_obj, clipped_obj)
    ent = entropy(params)
    loss = -surrogate.mean() - config.entropy_coef * ent

    # d surrogate / d ratio is A where the unclipped branch is active, else 0
    active = unclipped_obj <= clipped_obj
    dlogp = -(active * advantages * ratio) / n
    diff = actions - mean
    dmean = dlogp[:, None] * diff / std**2
    grads = mlp_backward(params, acts, dmean)
    dlog_std = (dlogp[:, None] * ((diff / std) ** 2 - 1.0)).sum(axis=0) - config.entropy_coef
    grads["log_std"] = np.where(params.log_std > LOG_STD_MIN, dlog_std, 0.0)
    stats = {
        "policy_loss": float(-surrogate.mean()),
        "entropy": ent,
        "clip_frac": float(np.mean(np.abs(ratio - 1.0) > config.clip_eps)),
        "approx_kl": float(np.mean(old_log_probs - logp)),
    }
    return float(loss), grads, stats


def value_loss_and_grad(params: ValueParams, states, returns, config: PpoConfig):
    """value_coef * mean squared error and its gradient."""
    out, acts = mlp_forward(params, states)
    err = out[:, 0] - returns
    loss = config.value_coef * float(np.mean(err**2))
    dout = (2.0 * config.value_coef / len(returns)) * err[:, None]
    return loss, mlp_backward(params, acts, dout)


# -- optimizer -------------------------------------------------------------------


@dataclass(eq=False)
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Params) -> "AdamState":
        return cls(
            {k: np.zeros_like(a) for k, a in params.arrays.items()},
            {k: np.zeros_like(a) for k, a in params.arrays.items()},
        )

    def copy(self) -> "AdamState":
        return AdamState({k: a.copy() for k, a in self.m.items()}, {k: a.copy() for k, a in self.v.items()}, self.t)


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> tuple[dict[str, np.ndarray], float]:
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        grads = {k: g * scale for k, g in grads.items()}
    return grads, norm


def adam_step(params: Params, grads, state: AdamState, lr: float, b1=0.9, b2=0.999, eps=1e-8) -> Params:
    """In-place update of ``state``; returns new parameter arrays."""
    state.t += 1
    out = {}
    for k, p in params.arrays.items():
        g = grads[k]
        state.m[k] = b1 * state.m[k] + (1 - b1) * g
        state.v[k] = b2 * state.v[k] + (1 - b2) * g * g
        m_hat = state.m[k] / (1 - b1**state.t)
        v_hat = state.v[k] / (1 - b2**state.t)
        out[k] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
    return params.replace(out)


@dataclass(eq=False)
class OptState:
    policy: AdamState
    value: AdamState
    updates: int = 0

    @classmethod
    def fresh(cls, policy: PolicyParams, value: ValueParams) -> "OptState":
        return cls(AdamState.zeros_like(policy), AdamState.zeros_like(value))

    def copy(self) -> "OptState":
        return OptState(self.policy.copy(), self.value.copy(), self.updates)


def ppo_update(
    policy: PolicyParams,
    value: ValueParams,
    batch: Batch,
    config: PpoConfig,
    opt: OptState | None = None,
) -> tuple[PolicyParams, ValueParams, dict]:
    """One PPO update over ``batch``. ``opt`` (if given) is advanced in place.

    On a non-finite gradient the original parameters are returned with
    ``stats["nonfinite"] = True`` and the optimizer state is left untouched.
    """
    if batch.consumed:
        raise BatchConsumed("this batch was already used for an update")
    batch.consumed = True
    work = opt.copy() if opt is not None else OptState.fresh(policy, value)
    rng = np.random.default_rng([config.seed, work.updates])
    n = len(batch)
    pol, val = policy, value
    history = []
    for _ in range(config.epochs_per_update):
        order = rng.permutation(n)
        for start in range(0, n, config.minibatch):
            idx = order[start : start + config.minibatch]
            with np.errstate(invalid="ignore", over="ignore"):  # non-finite values are caught below
                p_loss, p_grads, p_stats = policy_loss_and_grad(
                    pol, batch.states[idx], batch.actions[idx], batch.log_probs[idx], batch.advantages[idx], config
                )
                v_loss, v_grads = value_loss_and_grad(val, batch.states[idx], batch.returns[idx], config)
            if not (_finite(p_grads) and _finite(v_grads) and math.isfinite(p_loss) and math.isfinite(v_loss)):
                return policy, value, {"nonfinite": True}
            p_grads, p_norm = clip_by_global_norm(p_grads, config.grad_clip_norm)
            v_grads, v_norm = clip_by_global_norm(v_grads, config.grad_clip_norm)
            pol = adam_step(pol, p_grads, work.policy, config.lr)
            val = adam_step(val, v_grads, work.value, config.lr)
            history.append((p_loss, v_loss, p_stats["clip_frac"], p_stats["approx_kl"], p_norm, v_norm))
    if not (pol.is_finite() and val.is_finite()):
        return policy, value, {"nonfinite": True}
    work.updates += 1
    if opt is not None:
        opt.policy, opt.value, opt.updates = work.policy, work.value, work.updates
    h = np.array(history)
    stats = {
        "nonfinite": False,
        "policy_loss": float(h[:, 0].mean()),
        "value_loss": float(h[:, 1].mean()),
        "clip_frac": float(h[:, 2].mean()),
        "approx_kl": float(h[:, 3].mean()),
        "grad_norm": float(h[:, 4].mean()),
        "entropy": entropy(pol),
    }
    return pol, val, stats


def _finite(grads: dict[str, np.ndarray]) -> bool:
    return all(np.all(np.isfinite(g)) for g in grads.values())


# -- checkpoints -------------------------------------------------------------------


def _encode(arrays: dict[str, np.ndarray]) -> dict:
    # Python floats survive a JSON round trip exactly (shortest repr)
    return {k: {"shape": list(a.shape), "data": a.ravel().tolist()} for k, a in arrays.items()}


def _decode(doc: dict) -> dict[str, np.ndarray]:
    return {k: np.array(v["data"], dtype=float).reshape(v["shape"]) for k, v in doc.items()}


def agent_to_dict(policy: PolicyParams, value: ValueParams, config: PpoConfig, opt: OptState | None = None, **meta) -> dict:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": asdict(config),
        "policy": {"sizes": list(policy.sizes), "arrays": _encode(policy.arrays)},
        "value": {"sizes": list(value.sizes), "arrays": _encode(value.arrays)},
        "meta": meta,
    }
    if opt is not None:
        doc["optimizer"] = {
            "updates": opt.updates,
            "policy": {"t": opt.policy.t, "m": _encode(opt.policy.m), "v": _encode(opt.policy.v)},
            "value": {"t": opt.value.t, "m": _encode(opt.value.m), "v": _encode(opt.value.v)},
        }
    return doc


def agent_from_dict(doc: dict):
    """Inverse of ``agent_to_dict``: (policy, value, config, opt or None, meta)."""
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise MissingCheckpoint("not a geosched PPO checkpoint (format/version mismatch)")
    config = PpoConfig.from_dict(doc["config"])
    policy = PolicyParams(tuple(doc["policy"]["sizes"]), _decode(doc["policy"]["arrays"]))
    value = ValueParams(tuple(doc["value"]["sizes"]), _decode(doc["value"]["arrays"]))
    opt = None
    if "optimizer" in doc:
        o = doc["optimizer"]
        opt = OptState(
            AdamState(_decode(o["policy"]["m"]), _decode(o["policy"]["v"]), o["policy"]["t"]),
            AdamState(_decode(o["value"]["m"]), _decode(o["value"]["v"]), o["value"]["t"]),
            o["updates"],
        )
    return policy, value, config, opt, doc.get("meta", {})


def save_agent(path: str | Path, policy, value, config, opt=None, **meta) -> None:
    Path(path).write_text(json.dumps(agent_to_dict(policy, value, config, opt, **meta)))


def load_agent(path: str | Path):
    path = Path(path)
    if not path.exists():
        raise MissingCheckpoint(f"checkpoint not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise MissingCheckpoint(f"unreadable checkpoint {path}: {exc}") from exc
    return agent_from_dict(doc)
