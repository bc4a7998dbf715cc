"""PPO actor-critic over a discrete action catalog, in plain numpy.

Both networks are three affine layers with tanh between them; the actor ends
in a softmax. Gradients of the clipped-surrogate loss are derived by hand.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "rissim-ppo"
CHECKPOINT_VERSION = 1


class NumericError(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.002
    gamma: float = 0.08
    clip: float = 0.02
    episodes_per_update: int = 8
    update_epochs: int = 4
    minibatch_size: int = 0  # 0 means one full-batch step per epoch
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    normalize_advantages: bool = True
    hidden: int = 64
    seed: int = 0

    def __post_init__(self):
        errors = []
        if not self.learning_rate > 0:
            errors.append("learning_rate must be > 0")
        if not 0 <= self.gamma <= 1:
            errors.append("gamma must lie in [0, 1]")
        if not self.clip > 0:
            errors.append("clip must be > 0")
        if self.episodes_per_update < 1 or self.update_epochs < 1:
            errors.append("episodes_per_update and update_epochs must be >= 1")
        if self.minibatch_size < 0:
            errors.append("minibatch_size must be >= 0")
        if self.hidden < 1:
            errors.append("hidden must be >= 1")
        if errors:
            raise ValueError("; ".join(errors))


@dataclass
class NetworkParams:
    """Actor and critic weights as [W1, b1, W2, b2, W3, b3]; W has shape (fan_in, fan_out)."""

    actor: list
    critic: list

    @classmethod
    def initialize(cls, input_dim: int, n_actions: int, hidden: int, rng: np.random.Generator):
        def layers(widths):
            out = []
            for fan_in, fan_out in zip(widths[:-1], widths[1:]):
                bound = 1.0 / math.sqrt(fan_in)
                out.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
                out.append(rng.uniform(-bound, bound, size=fan_out))
            return out

        return cls(actor=layers([input_dim, hidden, hidden, n_actions]),
                   critic=layers([input_dim, hidden, hidden, 1]))

    @classmethod
    def zeros_like(cls, other: "NetworkParams"):
        return cls([np.zeros_like(a) for a in other.actor], [np.zeros_like(a) for a in other.critic])

    def arrays(self) -> list:
        return self.actor + self.critic

    def copy(self) -> "NetworkParams":
        return NetworkParams([a.copy() for a in self.actor], [a.copy() for a in self.critic])

    @property
    def input_dim(self) -> int:
        return self.actor[0].shape[0]

    @property
    def n_actions(self) -> int:
        return self.actor[-1].shape[0]


def _mlp_forward(layers, x):
    w1, b1, w2, b2, w3, b3 = layers
    h1 = np.tanh(x @ w1 + b1)
    h2 = np.tanh(h1 @ w2 + b2)
    out = h2 @ w3 + b3
    return out, (x, h1, h2)


def _mlp_backward(layers, cache, dout):
    w1, _, w2, _, w3, _ = layers
    x, h1, h2 = cache
    dw3 = h2.T @ dout
    db3 = dout.sum(axis=0)
    da2 = (dout @ w3.T) * (1.0 - h2 ** 2)
    dw2 = h1.T @ da2
    db2 = da2.sum(axis=0)
    da1 = (da2 @ w2.T) * (1.0 - h1 ** 2)
    dw1 = x.T @ da1
    db1 = da1.sum(axis=0)
    return [dw1, db1, dw2, db2, dw3, db3]


def _check_finite(name, arr):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {name}")


def log_softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def policy_logits(params: NetworkParams, states) -> np.ndarray:
    x = np.atleast_2d(np.asarray(states, dtype=float))
    out, _ = _mlp_forward(params.actor, x)
    _check_finite("actor logits", out)
    return out


def policy_forward(params: NetworkParams, state) -> np.ndarray:
    """Action distribution for a single state (or a batch, one row per state)."""
    state = np.asarray(state, dtype=float)
    if state.shape[-1] != params.input_dim:
        raise ValueError(f"state width {state.shape[-1]} != network input {params.input_dim}")
    probs = np.exp(log_softmax(policy_logits(params, state)))
    return probs[0] if state.ndim == 1 else probs


def value_forward(params: NetworkParams, state):
    state = np.asarray(state, dtype=float)
    if state.shape[-1] != params.input_dim:
        raise ValueError(f"state width {state.shape[-1]} != network input {params.input_dim}")
    out, _ = _mlp_forward(params.critic, np.atleast_2d(state))
    _check_finite("critic output", out)
    v = out[:, 0]
    return float(v[0]) if state.ndim == 1 else v


def reward_to_go(rewards, gamma: float) -> np.ndarray:
    out = np.zeros(len(rewards))
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def advantage_estimates(episodes, gamma: float, normalize: bool = True):
    """Advantages and value targets for a batch of finished episodes.

    ``episodes`` is a sequence of (rewards, values) pairs. Returns the
    concatenated (advantages, returns) with A_n = G_n - V(s_n), where G_n is
    the discounted reward-to-go within the episode.
    """
    adv, ret = [], []
    for rewards, values in episodes:
        g = reward_to_go(rewards, gamma)
        ret.append(g)
        adv.append(g - np.asarray(values, dtype=float))
    adv = np.concatenate(adv) if adv else np.zeros(0)
    ret = np.concatenate(ret) if ret else np.zeros(0)
    if normalize and adv.size > 1:
        std = adv.std()
        adv = (adv - adv.mean()) / (std if std > 1e-8 else 1.0)
    return adv, ret


def ppo_loss(old_logp, new_logp, advantages, clip: float, value_pred=None, returns=None,
             value_coef: float = 0.5, entropy=None, entropy_coef: float = 0.0) -> float:
    """Clipped surrogate plus value regression minus entropy bonus, averaged over the batch."""
    ratio = np.exp(np.asarray(new_logp) - np.asarray(old_logp))
    adv = np.asarray(advantages)
    surrogate = np.minimum(ratio * adv, np.clip(ratio, 1 - clip, 1 + clip) * adv)
    loss = -surrogate.mean()
    if value_pred is not None:
        loss += value_coef * np.mean((np.asarray(value_pred) - np.asarray(returns)) ** 2)
    if entropy is not None:
        loss -= entropy_coef * np.mean(entropy)
    return float(loss)


@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    old_logp: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray

    def __len__(self):
        return self.actions.shape[0]

    def subset(self, idx) -> "Batch":
        return Batch(self.states[idx], self.actions[idx], self.old_logp[idx],
                     self.advantages[idx], self.returns[idx])


def loss_and_gradients(params: NetworkParams, batch: Batch, clip: float,
                       value_coef: float = 0.5, entropy_coef: float = 0.01):
    """PPO loss on ``batch`` and its exact gradient for every parameter array."""
    n = len(batch)
    logits, a_cache = _mlp_forward(params.actor, batch.states)
    _check_finite("actor logits", logits)
    logp_all = log_softmax(logits)
    probs = np.exp(logp_all)
    rows = np.arange(n)
    new_logp = logp_all[rows, batch.actions]
    entropy = -(probs * logp_all).sum(axis=1)

    vout, c_cache = _mlp_forward(params.critic, batch.states)
    values = vout[:, 0]

    ratio = np.exp(new_logp - batch.old_logp)
    adv = batch.advantages
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1 - clip, 1 + clip) * adv
    loss = float(-np.minimum(unclipped, clipped).mean()
                 + value_coef * np.mean((values - batch.returns) ** 2)
                 - entropy_coef * entropy.mean())

    # d loss / d logp_n through the active branch of the min
    active = unclipped <= clipped
    dlogp = np.where(active, -ratio * adv, 0.0) / n
    onehot = np.zeros_like(probs)
    onehot[rows, batch.actions] = 1.0
    dlogits = dlogp[:, None] * (onehot - probs)
    # entropy: dH/dz_k = -p_k (log p_k + H)
    dlogits += (entropy_coef / n) * probs * (logp_all + entropy[:, None])
    actor_grads = _mlp_backward(params.actor, a_cache, dlogits)

    dv = (2.0 * value_coef / n) * (values - batch.returns)
    critic_grads = _mlp_backward(params.critic, c_cache, dv[:, None])

    grads = NetworkParams(actor_grads, critic_grads)
    for i, g in enumerate(grads.arrays()):
        _check_finite(f"gradient {i}", g)
    info = {"loss": loss, "entropy": float(entropy.mean()),
            "clip_fraction": float(np.mean(np.abs(ratio - 1) > clip))}
    return loss, grads, info


def backward(params: NetworkParams, batch: Batch, clip: float, value_coef: float = 0.5,
             entropy_coef: float = 0.01) -> NetworkParams:
    return loss_and_gradients(params, batch, clip, value_coef, entropy_coef)[1]


class Adam:
    def __init__(self, params: NetworkParams, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = NetworkParams.zeros_like(params)
        self.v = NetworkParams.zeros_like(params)
        self.t = 0

    def step(self, params: NetworkParams, grads: NetworkParams) -> NetworkParams:
        """In-place Adam update of ``params``; returns ``params``."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(params.arrays(), grads.arrays(), self.m.arrays(), self.v.arrays()):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return params


def adam_update(params: NetworkParams, grads: NetworkParams, optimizer: Adam) -> NetworkParams:
    return optimizer.step(params, grads)


@dataclass
class Trajectory:
    states: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    log_probs: list = field(default_factory=list)
    values: list = field(default_factory=list)
    metric: float = float("nan")

    def __len__(self):
        return len(self.actions)

    @property
    def episode_return(self) -> float:
        return float(sum(self.rewards))


class PPOAgent:
    """Policy/value networks plus the PPO update rule.

    ``obs_scale`` multiplies raw states elementwise before they reach either
    network.
    """

    def __init__(self, state_dim: int, n_actions: int, cfg: TrainConfig | None = None,
                 obs_scale=None, params: NetworkParams | None = None):
        self.cfg = cfg or TrainConfig()
        self.rng = np.random.default_rng(self.cfg.seed)
        self.params = params or NetworkParams.initialize(state_dim, n_actions, self.cfg.hidden, self.rng)
        self.obs_scale = np.ones(state_dim) if obs_scale is None else np.asarray(obs_scale, dtype=float)
        self.optimizer = Adam(self.params, self.cfg.learning_rate)
        self.old_params = self.params.copy()

    @property
    def n_actions(self) -> int:
        return self.params.n_actions

    def preprocess(self, state) -> np.ndarray:
        return np.asarray(state, dtype=float) * self.obs_scale

    def act(self, state, greedy: bool = False):
        """(action, log-prob, value) under the acting (old) policy."""
        x = self.preprocess(state)
        logits, _ = _mlp_forward(self.old_params.actor, x[None, :])
        _check_finite("actor logits", logits)
        logp = log_softmax(logits)[0]
        if greedy:
            a = int(np.argmax(logp))
        else:
            cdf = np.cumsum(np.exp(logp))
            a = min(int(np.searchsorted(cdf, self.rng.random() * cdf[-1], side="right")), logp.size - 1)
        v = float(_mlp_forward(self.old_params.critic, x[None, :])[0][0, 0])
        return a, float(logp[a]), v

    def rollout(self, env, greedy: bool = False) -> Trajectory:
        traj = Trajectory()
        state = env.state()
        done = env.done
        while not done:
            a, lp, v = self.act(state, greedy)
            out = env.step(a)
            traj.states.append(self.preprocess(state))
            traj.actions.append(a)
            traj.rewards.append(out.reward)
            traj.log_probs.append(lp)
            traj.values.append(v)
            state, done = out.next_state, out.done
        if hasattr(env, "departed_z"):
            z = env.departed_z()
            traj.metric = min(z) if z else float("nan")
        return traj

    def make_batch(self, trajectories) -> Batch:
        adv, ret = advantage_estimates([(t.rewards, t.values) for t in trajectories],
                                       self.cfg.gamma, self.cfg.normalize_advantages)
        return Batch(states=np.concatenate([np.array(t.states) for t in trajectories]),
                     actions=np.concatenate([np.array(t.actions, dtype=np.int64) for t in trajectories]),
                     old_logp=np.concatenate([np.array(t.log_probs) for t in trajectories]),
                     advantages=adv, returns=ret)

    def update(self, batch: Batch) -> dict:
        cfg = self.cfg
        n = len(batch)
        mb = cfg.minibatch_size if 0 < cfg.minibatch_size < n else n
        info = {}
        for _ in range(cfg.update_epochs):
            order = self.rng.permutation(n) if mb < n else np.arange(n)
            for start in range(0, n, mb):
                sub = batch.subset(order[start:start + mb])
                _, grads, info = loss_and_gradients(self.params, sub, cfg.clip, cfg.value_coef,
                                                    cfg.entropy_coef)
                self.optimizer.step(self.params, grads)
        self.old_params = self.params.copy()
        return info

    # -- persistence -------------------------------------------------------
    def save(self, path) -> None:
        save_checkpoint(path, self.params, self.obs_scale, self.cfg)

    @classmethod
    def load(cls, path) -> "PPOAgent":
        params, obs_scale, cfg = load_checkpoint(path)
        agent = cls(params.input_dim, params.n_actions, cfg, obs_scale, params)
        return agent


def _layer_dicts(arrays):
    out = []
    for w, b in zip(arrays[0::2], arrays[1::2]):
        out.append({"shape": list(w.shape), "weights": w.ravel(order="C").tolist(), "bias": b.tolist()})
    return out


def _layers_from_dicts(dicts):
    arrays = []
    for d in dicts:
        w = np.array(d["weights"], dtype=float).reshape(d["shape"], order="C")
        b = np.array(d["bias"], dtype=float)
        if b.shape != (w.shape[1],):
            raise ValueError("checkpoint bias does not match weight shape")
        arrays += [w, b]
    return arrays


def save_checkpoint(path, params: NetworkParams, obs_scale, cfg: TrainConfig) -> None:
    """Plain-text JSON: layer shapes and row-major weights for actor and critic."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "train_config": asdict(cfg),
        "obs_scale": np.asarray(obs_scale, dtype=float).tolist(),
        "actor": _layer_dicts(params.actor),
        "critic": _layer_dicts(params.critic),
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path):
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    params = NetworkParams(_layers_from_dicts(doc["actor"]), _layers_from_dicts(doc["critic"]))
    return params, np.array(doc["obs_scale"]), TrainConfig(**doc["train_config"])


@dataclass
class LearningCurve:
    mean_return: list = field(default_factory=list)
    min_avg_bitrate: list = field(default_factory=list)

    def __len__(self):
        return len(self.mean_return)

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("update_index,mean_return,min_avg_bitrate\n")
            for i, (r, m) in enumerate(zip(self.mean_return, self.min_avg_bitrate)):
                fh.write(f"{i},{r!r},{m!r}\n")


def train(env_factory, cfg: TrainConfig | None = None, n_updates: int = 1000,
          agent: PPOAgent | None = None, obs_scale=None, progress=None):
    """Run ``n_updates`` PPO updates; returns (agent, learning curve).

    ``env_factory(i)`` must return a freshly reset environment for episode
    ``i``; episodes are numbered consecutively across updates, so a fixed
    factory and seed reproduce the same curve.
    """
    cfg = cfg or TrainConfig()
    episode = 0
    curve = LearningCurve()
    for u in range(n_updates):
        trajs = []
        for _ in range(cfg.episodes_per_update):
            env = env_factory(episode)
            episode += 1
            if agent is None:
                scale = obs_scale if obs_scale is not None else getattr(env, "observation_scale", None)
                agent = PPOAgent(env.state_dim, env.n_actions, cfg, scale)
            trajs.append(agent.rollout(env))
        agent.update(agent.make_batch(trajs))
        curve.mean_return.append(float(np.mean([t.episode_return for t in trajs])))
        curve.min_avg_bitrate.append(float(np.nanmean([t.metric for t in trajs]))
                                     if any(np.isfinite(t.metric) for t in trajs) else float("nan"))
        if progress is not None:
            progress(u, curve)
    if agent is None:
        env = env_factory(0)
        agent = PPOAgent(env.state_dim, env.n_actions, cfg,
                         obs_scale if obs_scale is not None else getattr(env, "observation_scale", None))
    return agent, curve
