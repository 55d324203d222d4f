"""Soft Actor-Critic trainer shared across all atom agents.

Networks are two-hidden-layer ReLU MLPs implemented directly in numpy with
closed-form reverse-mode gradients; correctness is pinned by finite-difference
tests rather than an autodiff framework. The policy emits a tanh-squashed
diagonal Gaussian; two Q-networks with Polyak-averaged targets bound the
value estimate; the entropy temperature is learned through its logarithm.

Transitions carry done=True only on successful termination, so truncated
episodes still bootstrap through the targets.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, asdict

import numpy as np

from .env import EnvConfig, MacsEnv, RunningNorm, observation_length

__all__ = [
    "TrainerConfig",
    "Mlp",
    "ReplayBuffer",
    "Batch",
    "SacTrainer",
    "DeterministicPolicy",
    "save_checkpoint",
    "load_checkpoint",
    "train",
]

log = logging.getLogger(__name__)

ACTION_DIM = 3
LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
SQUASH_EPS = 1e-6
CHECKPOINT_MAGIC = "periopt-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class TrainerConfig:
    gamma: float = 0.995
    batch_size: int = 8192
    target_entropy: float = -8.0
    tau: float = 0.001
    initial_alpha: float = 1.0
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    entropy_lr: float = 1e-4
    warmup_samples: int = 500
    buffer_capacity: int = 10_000_000
    hidden: tuple = (256, 256)
    num_envs: int = 40
    total_rounds: int = 80_000
    # Polyak step applied once every this many gradient updates
    target_update_interval: int = 1
    checkpoint_interval: int = 1000
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.batch_size < 1 or self.buffer_capacity < 1:
            raise ValueError("batch_size and buffer_capacity must be positive")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")
        if self.initial_alpha <= 0:
            raise ValueError("initial_alpha must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


class Mlp:
    """Two-hidden-layer ReLU MLP with explicit forward caches and backprop."""

    def __init__(self, sizes, rng=None):
        self.sizes = tuple(int(s) for s in sizes)
        if len(self.sizes) != 4:
            raise ValueError("expected input, two hidden, and output sizes")
        self.params = []
        if rng is not None:
            for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
                w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
                self.params.append(w)
                self.params.append(np.zeros(fan_out))
        else:
            for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
                self.params.append(np.zeros((fan_in, fan_out)))
                self.params.append(np.zeros(fan_out))

    def copy(self) -> "Mlp":
        other = Mlp(self.sizes)
        other.params = [p.copy() for p in self.params]
        return other

    def forward(self, x):
        w1, b1, w2, b2, w3, b3 = self.params
        z1 = x @ w1 + b1
        h1 = np.maximum(z1, 0.0)
        z2 = h1 @ w2 + b2
        h2 = np.maximum(z2, 0.0)
        out = h2 @ w3 + b3
        return out, (x, z1, h1, z2, h2)

    def backward(self, cache, dout):
        """Gradients of a scalar loss given d(loss)/d(out).

        Returns (param_grads, d(loss)/d(input)).
        """
        x, z1, h1, z2, h2 = cache
        w1, b1, w2, b2, w3, b3 = self.params
        dw3 = h2.T @ dout
        db3 = dout.sum(axis=0)
        dh2 = dout @ w3.T
        dz2 = dh2 * (z2 > 0)
        dw2 = h1.T @ dz2
        db2 = dz2.sum(axis=0)
        dh1 = dz2 @ w2.T
        dz1 = dh1 * (z1 > 0)
        dw1 = x.T @ dz1
        db1 = dz1.sum(axis=0)
        dx = dz1 @ w1.T
        return [dw1, db1, dw2, db2, dw3, db3], dx


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


@dataclass
class Batch:
    obs: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    next_obs: np.ndarray
    done: np.ndarray


class ReplayBuffer:
    """Fixed-capacity ring buffer with uniform sampling.

    Arrays are allocated float32 on the first insert, once the observation
    width is known.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.size = 0
        self._head = 0
        self._obs = None
        self._action = None
        self._reward = None
        self._next_obs = None
        self._done = None

    def __len__(self):
        return self.size

    def _allocate(self, obs_dim):
        self._obs = np.empty((self.capacity, obs_dim), dtype=np.float32)
        self._next_obs = np.empty((self.capacity, obs_dim), dtype=np.float32)
        self._action = np.empty((self.capacity, ACTION_DIM), dtype=np.float32)
        self._reward = np.empty(self.capacity, dtype=np.float32)
        self._done = np.empty(self.capacity, dtype=np.float32)

    def add(self, obs, action, reward, next_obs, done):
        """Insert one batch of transitions (leading axis = agents)."""
        obs = np.atleast_2d(np.asarray(obs, dtype=np.float32))
        next_obs = np.atleast_2d(np.asarray(next_obs, dtype=np.float32))
        action = np.atleast_2d(np.asarray(action, dtype=np.float32))
        reward = np.atleast_1d(np.asarray(reward, dtype=np.float32))
        done = np.broadcast_to(np.asarray(done, dtype=np.float32), reward.shape)
        if self._obs is None:
            self._allocate(obs.shape[1])
        for i in range(len(reward)):
            j = self._head
            self._obs[j] = obs[i]
            self._action[j] = action[i]
            self._reward[j] = reward[i]
            self._next_obs[j] = next_obs[i]
            self._done[j] = done[i]
            self._head = (self._head + 1) % self.capacity
            self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng) -> Batch:
        if self.size == 0:
            raise ValueError("buffer is empty")
        idx = rng.integers(0, self.size, size=batch_size)
        return Batch(
            obs=self._obs[idx].astype(float),
            action=self._action[idx].astype(float),
            reward=self._reward[idx].astype(float),
            next_obs=self._next_obs[idx].astype(float),
            done=self._done[idx].astype(float),
        )


def split_policy_head(out):
    """Raw policy output -> (mean, clamped log_std, clamp pass-through mask)."""
    mean = out[:, :ACTION_DIM]
    raw = out[:, ACTION_DIM:]
    log_std = np.clip(raw, LOG_STD_MIN, LOG_STD_MAX)
    mask = (raw > LOG_STD_MIN) & (raw < LOG_STD_MAX)
    return mean, log_std, mask


def squash(mean, log_std, noise):
    """Reparameterized tanh-squashed sample and its log-density.

    noise is the standard-normal draw; returns (action, log_prob, pre_tanh).
    """
    std = np.exp(log_std)
    u = mean + std * noise
    a = np.tanh(u)
    log_prob = (
        -0.5 * noise**2 - log_std - 0.5 * np.log(2.0 * np.pi)
        - np.log(1.0 - a**2 + SQUASH_EPS)
    ).sum(axis=1)
    return a, log_prob, u


def _squash_grads(a, log_std, noise):
    """Per-component partials of action and log-density wrt (mean, log_std).

    With u = mean + exp(log_std)·noise and a = tanh(u):
      da/dmean = 1 - a²,        da/dlog_std = (1 - a²)·std·noise
      dlogp/du = 2a(1 - a²)/(1 - a² + eps)
      dlogp/dmean = dlogp/du,   dlogp/dlog_std = -1 + dlogp/du·std·noise
    """
    std = np.exp(log_std)
    one_minus = 1.0 - a**2
    dlogp_du = 2.0 * a * one_minus / (one_minus + SQUASH_EPS)
    da_dmean = one_minus
    da_dls = one_minus * std * noise
    dlogp_dmean = dlogp_du
    dlogp_dls = -1.0 + dlogp_du * std * noise
    return da_dmean, da_dls, dlogp_dmean, dlogp_dls


def critic_targets(policy: Mlp, q1_t: Mlp, q2_t: Mlp, batch: Batch,
                   alpha: float, gamma: float, noise: np.ndarray) -> np.ndarray:
    out, _ = policy.forward(batch.next_obs)
    mean, log_std, _ = split_policy_head(out)
    a2, logp2, _ = squash(mean, log_std, noise)
    x2 = np.hstack([batch.next_obs, a2])
    q1v, _ = q1_t.forward(x2)
    q2v, _ = q2_t.forward(x2)
    qmin = np.minimum(q1v[:, 0], q2v[:, 0])
    return batch.reward + gamma * (1.0 - batch.done) * (qmin - alpha * logp2)


def critic_loss(q1: Mlp, q2: Mlp, batch: Batch, y: np.ndarray) -> float:
    x = np.hstack([batch.obs, batch.action])
    q1v, _ = q1.forward(x)
    q2v, _ = q2.forward(x)
    return 0.5 * float(
        np.mean((q1v[:, 0] - y) ** 2) + np.mean((q2v[:, 0] - y) ** 2)
    )


def critic_grads(q1: Mlp, q2: Mlp, batch: Batch, y: np.ndarray):
    x = np.hstack([batch.obs, batch.action])
    n = len(y)
    q1v, c1 = q1.forward(x)
    q2v, c2 = q2.forward(x)
    g1, _ = q1.backward(c1, ((q1v[:, 0] - y) / n)[:, None])
    g2, _ = q2.backward(c2, ((q2v[:, 0] - y) / n)[:, None])
    loss = 0.5 * float(
        np.mean((q1v[:, 0] - y) ** 2) + np.mean((q2v[:, 0] - y) ** 2)
    )
    return loss, g1, g2


def actor_loss(policy: Mlp, q1: Mlp, q2: Mlp, obs: np.ndarray,
               noise: np.ndarray, alpha: float) -> float:
    out, _ = policy.forward(obs)
    mean, log_std, _ = split_policy_head(out)
    a, logp, _ = squash(mean, log_std, noise)
    x = np.hstack([obs, a])
    q1v, _ = q1.forward(x)
    q2v, _ = q2.forward(x)
    qmin = np.minimum(q1v[:, 0], q2v[:, 0])
    return float(np.mean(alpha * logp - qmin))


def actor_grads(policy: Mlp, q1: Mlp, q2: Mlp, obs: np.ndarray,
                noise: np.ndarray, alpha: float):
    """Loss, policy-parameter gradients, and mean log-density.

    Q parameters are held fixed; the gradient reaches the policy both through
    the entropy term and through the action input of the smaller Q head.
    """
    n = len(obs)
    out, cache = policy.forward(obs)
    mean, log_std, mask = split_policy_head(out)
    a, logp, _ = squash(mean, log_std, noise)
    x = np.hstack([obs, a])
    q1v, c1 = q1.forward(x)
    q2v, c2 = q2.forward(x)
    use_q1 = q1v[:, 0] <= q2v[:, 0]
    qmin = np.where(use_q1, q1v[:, 0], q2v[:, 0])
    loss = float(np.mean(alpha * logp - qmin))

    # d(-mean qmin)/d(action) via the selected Q head's input gradient
    d1 = np.where(use_q1, -1.0 / n, 0.0)[:, None]
    d2 = np.where(use_q1, 0.0, -1.0 / n)[:, None]
    _, dx1 = q1.backward(c1, d1)
    _, dx2 = q2.backward(c2, d2)
    da = (dx1 + dx2)[:, -ACTION_DIM:]

    da_dmean, da_dls, dlogp_dmean, dlogp_dls = _squash_grads(a, log_std, noise)
    dmean = da * da_dmean + (alpha / n) * dlogp_dmean
    dls = da * da_dls + (alpha / n) * dlogp_dls
    dout = np.hstack([dmean, dls * mask])
    grads, _ = policy.backward(cache, dout)
    return loss, grads, float(np.mean(logp))


def alpha_loss(log_alpha: float, mean_logp: float, target_entropy: float) -> float:
    return -np.exp(log_alpha) * (mean_logp + target_entropy)


def alpha_grad(log_alpha: float, mean_logp: float, target_entropy: float) -> float:
    # d/dlog_alpha of -exp(log_alpha)·(mean_logp + target)
    return -np.exp(log_alpha) * (mean_logp + target_entropy)


class DeterministicPolicy:
    """Frozen MEAN-mode policy bundled with its observation normalizer."""

    def __init__(self, policy: Mlp, normalizer: RunningNorm | None,
                 env_cfg: EnvConfig):
        self.policy = policy
        self.normalizer = normalizer
        self.env_cfg = env_cfg

    def __call__(self, obs: np.ndarray) -> np.ndarray:
        out, _ = self.policy.forward(np.atleast_2d(obs))
        return np.tanh(out[:, :ACTION_DIM])


class SacTrainer:
    """Holds all learnable state and performs one-step SAC updates."""

    def __init__(self, env_cfg: EnvConfig | None = None,
                 cfg: TrainerConfig | None = None, rng=None):
        self.env_cfg = env_cfg or EnvConfig()
        self.cfg = cfg or TrainerConfig()
        rng = rng or np.random.default_rng(self.cfg.seed)
        self.rng = rng
        obs_dim = observation_length(self.env_cfg)
        h1, h2 = self.cfg.hidden
        self.policy = Mlp([obs_dim, h1, h2, 2 * ACTION_DIM], rng)
        self.q1 = Mlp([obs_dim + ACTION_DIM, h1, h2, 1], rng)
        self.q2 = Mlp([obs_dim + ACTION_DIM, h1, h2, 1], rng)
        self.q1_target = self.q1.copy()
        self.q2_target = self.q2.copy()
        self.log_alpha = float(np.log(self.cfg.initial_alpha))
        self.obs_norm = RunningNorm(obs_dim)
        self.buffer = ReplayBuffer(self.cfg.buffer_capacity)
        self.actor_opt = Adam(self.policy.params, self.cfg.actor_lr)
        self.critic_opt = Adam(self.q1.params + self.q2.params,
                               self.cfg.critic_lr)
        self.alpha_opt = Adam([np.zeros(1)], self.cfg.entropy_lr)
        self.updates = 0

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha))

    @property
    def obs_dim(self) -> int:
        return observation_length(self.env_cfg)

    def act(self, obs: np.ndarray, mode: str = "SAMPLE") -> np.ndarray:
        obs = np.atleast_2d(obs)
        if not all(np.all(np.isfinite(p)) for p in self.policy.params):
            raise ValueError("non-finite policy parameters")
        out, _ = self.policy.forward(obs)
        mean, log_std, _ = split_policy_head(out)
        if mode == "MEAN":
            return np.tanh(mean)
        if mode != "SAMPLE":
            raise ValueError(f"unknown action mode {mode!r}")
        noise = self.rng.standard_normal(mean.shape)
        a, _, _ = squash(mean, log_std, noise)
        return a

    def update(self) -> dict:
        cfg = self.cfg
        batch = self.buffer.sample(cfg.batch_size, self.rng)
        noise_next = self.rng.standard_normal((cfg.batch_size, ACTION_DIM))
        y = critic_targets(self.policy, self.q1_target, self.q2_target,
                           batch, self.alpha, cfg.gamma, noise_next)
        closs, g1, g2 = critic_grads(self.q1, self.q2, batch, y)
        self.critic_opt.step(self.q1.params + self.q2.params, g1 + g2)

        noise = self.rng.standard_normal((cfg.batch_size, ACTION_DIM))
        aloss, agrads, mean_logp = actor_grads(
            self.policy, self.q1, self.q2, batch.obs, noise, self.alpha
        )
        self.actor_opt.step(self.policy.params, agrads)

        la = np.array([self.log_alpha])
        self.alpha_opt.step(
            [la], [np.array([alpha_grad(self.log_alpha, mean_logp,
                                        cfg.target_entropy)])]
        )
        self.log_alpha = float(la[0])

        if not (np.isfinite(closs) and np.isfinite(aloss)):
            raise FloatingPointError(
                f"non-finite SAC loss (critic={closs}, actor={aloss}, "
                f"alpha={self.alpha})"
            )

        self.updates += 1
        if self.updates % cfg.target_update_interval == 0:
            self._polyak()
        return {"critic_loss": closs, "actor_loss": aloss,
                "alpha": self.alpha, "mean_logp": mean_logp}

    def _polyak(self):
        tau = self.cfg.tau
        for online, target in ((self.q1, self.q1_target),
                               (self.q2, self.q2_target)):
            for p, t in zip(online.params, target.params):
                t *= 1.0 - tau
                t += tau * p

    def make_policy(self) -> DeterministicPolicy:
        return DeterministicPolicy(self.policy.copy(), self.obs_norm,
                                   self.env_cfg)


def _named_arrays(trainer: SacTrainer) -> dict:
    arrays = {}
    for prefix, net in (("policy", trainer.policy),
                        ("q1", trainer.q1), ("q2", trainer.q2),
                        ("q1_target", trainer.q1_target),
                        ("q2_target", trainer.q2_target)):
        for i, p in enumerate(net.params):
            arrays[f"{prefix}.{i}"] = p
    arrays["log_alpha"] = np.array([trainer.log_alpha])
    for name, arr in trainer.obs_norm.state_arrays().items():
        arrays[f"obs_norm.{name}"] = arr
    return arrays


def save_checkpoint(path, trainer: SacTrainer) -> None:
    """Write a version-tagged checkpoint: JSON header + float32 blocks.

    Live parameters are snapped to their float32 representation so a reload
    reproduces the in-memory state bitwise.
    """
    arrays = _named_arrays(trainer)
    header = {
        "magic": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "env_config": trainer.env_cfg.to_dict(),
        "trainer_config": trainer.cfg.to_dict(),
        "rng_state": trainer.rng.bit_generator.state,
        "arrays": [
            {"name": k, "shape": list(v.shape), "dtype": "<f4"}
            for k, v in arrays.items()
        ],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode() + b"\n")
        for k, v in arrays.items():
            block = np.ascontiguousarray(v, dtype="<f4")
            v[...] = block.astype(v.dtype)
            fh.write(block.tobytes())
    trainer.log_alpha = float(np.float32(trainer.log_alpha))


def load_checkpoint(path, env_cfg: EnvConfig | None = None) -> SacTrainer:
    """Rebuild a trainer from a checkpoint file.

    If `env_cfg` is given, its observation layout must match the one the
    checkpoint was trained with.
    """
    with open(path, "rb") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"corrupt checkpoint header: {exc}") from exc
        if header.get("magic") != CHECKPOINT_MAGIC:
            raise ValueError("not a checkpoint file")
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(
                f"unsupported checkpoint version {header.get('version')}"
            )
        saved_env = EnvConfig(**header["env_config"])
        if env_cfg is not None and (
            observation_length(env_cfg) != observation_length(saved_env)
            or env_cfg.feature_variant != saved_env.feature_variant
        ):
            raise ValueError(
                "environment layout mismatch: checkpoint expects "
                f"{saved_env.feature_variant} with k={saved_env.k}"
            )
        tcfg_dict = header["trainer_config"]
        trainer = SacTrainer(saved_env, TrainerConfig(**tcfg_dict))
        arrays = {}
        for entry in header["arrays"]:
            count = int(np.prod(entry["shape"])) if entry["shape"] else 1
            raw = fh.read(count * 4)
            if len(raw) != count * 4:
                raise ValueError("corrupt checkpoint: truncated array block")
            arrays[entry["name"]] = np.frombuffer(raw, dtype="<f4").reshape(
                entry["shape"]
            ).astype(float)
    for prefix, net in (("policy", trainer.policy),
                        ("q1", trainer.q1), ("q2", trainer.q2),
                        ("q1_target", trainer.q1_target),
                        ("q2_target", trainer.q2_target)):
        for i in range(len(net.params)):
            block = arrays[f"{prefix}.{i}"]
            if block.shape != net.params[i].shape:
                raise ValueError(
                    f"shape mismatch for {prefix}.{i}: checkpoint "
                    f"{block.shape} vs network {net.params[i].shape}"
                )
            net.params[i] = block
    trainer.log_alpha = float(arrays["log_alpha"][0])
    trainer.obs_norm = RunningNorm.from_state_arrays({
        "count": arrays["obs_norm.count"],
        "mean": arrays["obs_norm.mean"],
        "m2": arrays["obs_norm.m2"],
    })
    trainer.rng.bit_generator.state = header["rng_state"]
    return trainer


def train(structure_source, calc_factory, env_cfg: EnvConfig | None = None,
          cfg: TrainerConfig | None = None, log_path=None,
          checkpoint_path=None, trainer: SacTrainer | None = None,
          round_callback=None) -> SacTrainer:
    """Run the collection/update loop over several environments.

    `structure_source(rng)` supplies a fresh starting structure for each
    episode; `calc_factory()` builds one calculator per environment. Each
    round collects one step from every environment (one transition per atom)
    and performs one gradient update once warmup has passed.
    """
    env_cfg = env_cfg or EnvConfig()
    cfg = cfg or TrainerConfig()
    trainer = trainer or SacTrainer(env_cfg, cfg)
    rng = trainer.rng

    envs = [MacsEnv(calc_factory(), env_cfg, obs_norm=trainer.obs_norm,
                    training=True) for _ in range(cfg.num_envs)]
    obs = [None] * cfg.num_envs
    ep_reward = np.zeros(cfg.num_envs)

    def fresh_episode(i):
        # resample until the starting structure is not already converged
        for _ in range(100):
            try:
                o = envs[i].reset(structure_source(rng))
            except Exception as exc:
                log.warning("episode start failed, resampling: %s", exc)
                continue
            if not envs[i].done:
                obs[i] = o
                ep_reward[i] = 0.0
                return
        raise RuntimeError("could not start an unconverged episode")

    for i in range(cfg.num_envs):
        fresh_episode(i)

    env_steps = 0
    episodes = 0
    finished_rewards = []
    finished_lengths = []
    writer = None
    log_fh = None
    if log_path is not None:
        log_fh = open(log_path, "w", newline="")
        writer = csv.writer(log_fh)
        writer.writerow(["round", "env_steps", "episodes", "mean_ep_reward",
                         "mean_ep_len", "actor_loss", "critic_loss", "alpha"])

    losses = {"actor_loss": float("nan"), "critic_loss": float("nan")}
    try:
        for rnd in range(1, cfg.total_rounds + 1):
            for i, env in enumerate(envs):
                actions = trainer.act(obs[i], "SAMPLE")
                out = env.step(actions)
                env_steps += 1
                if out.calculator_failed:
                    log.warning("calculator failure, dropping episode")
                    fresh_episode(i)
                    continue
                done_flag = 1.0 if out.done_reason == "SUCCESS" else 0.0
                trainer.buffer.add(obs[i], actions, out.rewards,
                                   out.observations, done_flag)
                ep_reward[i] += out.rewards.mean()
                obs[i] = out.observations
                if env.done:
                    episodes += 1
                    finished_rewards.append(ep_reward[i])
                    finished_lengths.append(env.t)
                    fresh_episode(i)

            if len(trainer.buffer) >= cfg.warmup_samples:
                losses = trainer.update()

            if writer is not None:
                recent_r = finished_rewards[-50:]
                recent_l = finished_lengths[-50:]
                writer.writerow([
                    rnd, env_steps, episodes,
                    np.mean(recent_r) if recent_r else "",
                    np.mean(recent_l) if recent_l else "",
                    losses["actor_loss"], losses["critic_loss"],
                    trainer.alpha,
                ])
            if checkpoint_path is not None and rnd % cfg.checkpoint_interval == 0:
                save_checkpoint(checkpoint_path, trainer)
            if round_callback is not None:
                if round_callback(rnd, episodes, finished_lengths) is False:
                    break
    finally:
        if log_fh is not None:
            log_fh.close()

    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, trainer)
    trainer.episode_lengths = finished_lengths
    trainer.episode_rewards = finished_rewards
    return trainer
