"""Multi-agent environment for learned geometry optimization.

Each atom is an agent. Observations are built from scaled per-atom energy
gradients, optimization history, and the local neighbor geometry; they never
reference absolute positions inside the cell, so agents cross cell
boundaries seamlessly. Success is judged on the unscaled forces; features,
action scales, and rewards all use the scaled gradients.

Sign convention: g = -force, the true energy gradient.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, asdict, fields

import numpy as np

from .crystal import Structure, k_nearest
from .optimizers import RelaxationReport, TerminationPolicy, max_force_norm

__all__ = [
    "EnvConfig",
    "StepOutcome",
    "RunningNorm",
    "MacsEnv",
    "scale_gradient",
    "action_scale",
    "feature_length",
    "observation_length",
    "relax_with_policy",
]

FEATURE_VARIANTS = ("FULL", "FEAT6", "FEAT7", "FEAT8", "FEAT9")
REWARD_VARIANTS = ("BASE", "PENALTY", "SHARED")
ACTION_VARIANTS = ("SCALED", "DIRECT")

LOG_NORM_FLOOR = 1e-12  # clamp before ln so converged agents stay finite


@dataclass
class EnvConfig:
    k: int = 12
    g_max: float = 5.0
    c_max: float = 0.4
    fmax: float = 0.05
    max_steps: int = 1000
    feature_variant: str = "FULL"
    reward_variant: str = "BASE"
    action_variant: str = "SCALED"
    a_max: float = 0.1  # displacement bound for the DIRECT action variant
    penalty: float = -0.05
    normalize_obs: bool = True

    def __post_init__(self):
        if self.k < 1 or self.g_max <= 0 or self.c_max <= 0:
            raise ValueError("k, g_max, c_max must be positive")
        if self.penalty > 0:
            raise ValueError("penalty must be <= 0")
        if self.feature_variant not in FEATURE_VARIANTS:
            raise ValueError(f"unknown feature variant {self.feature_variant!r}")
        if self.reward_variant not in REWARD_VARIANTS:
            raise ValueError(f"unknown reward variant {self.reward_variant!r}")
        if self.action_variant not in ACTION_VARIANTS:
            raise ValueError(f"unknown action variant {self.action_variant!r}")

    def to_dict(self) -> dict:
        return asdict(self)


def feature_length(variant: str) -> int:
    return {"FULL": 12, "FEAT6": 5, "FEAT7": 6, "FEAT8": 9, "FEAT9": 9}[variant]


def observation_length(cfg: EnvConfig) -> int:
    # own + k neighbor features, k distances, k relative vectors
    return feature_length(cfg.feature_variant) * (cfg.k + 1) + 4 * cfg.k


def scale_gradient(g0: np.ndarray, g_max: float) -> np.ndarray:
    """Cap the inf-norm at g_max while preserving direction exactly.

    Accepts a single 3-vector or an (N, 3) batch.
    """
    g0 = np.asarray(g0, dtype=float)
    single = g0.ndim == 1
    g = np.atleast_2d(g0)
    inf = np.abs(g).max(axis=1)
    factor = np.where(inf < g_max, 1.0, g_max / np.maximum(inf, 1e-300))
    out = g * factor[:, None]
    return out[0] if single else out


def action_scale(g: np.ndarray, c_max: float):
    """Per-agent action scale: min(|g|_2, c_max)."""
    g = np.asarray(g, dtype=float)
    if g.ndim == 1:
        return min(float(np.linalg.norm(g)), c_max)
    return np.minimum(np.linalg.norm(g, axis=1), c_max)


@dataclass
class StepOutcome:
    observations: np.ndarray  # (N, obs_dim)
    rewards: np.ndarray  # (N,)
    done: bool
    done_reason: str | None  # "SUCCESS" | "TRUNCATED" | None
    energy: float
    calculator_failed: bool = False


class RunningNorm:
    """Component-wise running mean/variance normalizer (Welford)."""

    def __init__(self, dim: int):
        self.count = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def update(self, batch: np.ndarray) -> None:
        batch = np.atleast_2d(batch)
        for x in batch:
            self.count += 1
            delta = x - self.mean
            self.mean += delta / self.count
            self.m2 += delta * (x - self.mean)

    @property
    def var(self) -> np.ndarray:
        if self.count < 2:
            return np.zeros_like(self.m2)
        return self.m2 / self.count

    def normalize(self, x: np.ndarray) -> np.ndarray:
        if self.count == 0:
            return np.asarray(x, dtype=float)
        return (x - self.mean) / np.sqrt(self.var + 1e-8)

    def state_arrays(self) -> dict:
        return {"count": np.array([self.count], dtype=float),
                "mean": self.mean, "m2": self.m2}

    @classmethod
    def from_state_arrays(cls, state: dict) -> "RunningNorm":
        norm = cls(len(state["mean"]))
        norm.count = int(state["count"][0])
        norm.mean = np.asarray(state["mean"], dtype=float).copy()
        norm.m2 = np.asarray(state["m2"], dtype=float).copy()
        return norm


class MacsEnv:
    """One structure being optimized; atoms are the agents.

    The environment owns one calculator handle. `obs_norm` (shared across
    environments) is updated only when `training` is true; evaluation runs
    against frozen statistics.
    """

    def __init__(self, calc, cfg: EnvConfig | None = None,
                 obs_norm: RunningNorm | None = None, training: bool = False):
        self.calc = calc
        self.cfg = cfg or EnvConfig()
        self.obs_norm = obs_norm
        self.training = training
        self.structure = None
        self.t = 0
        self.done = True
        self.done_reason = None
        self._scaled_g = None
        self._d_prev = None
        self._dg = None
        self._raw_fmax = None
        self.last_energy = None
        self.last_raw_obs = None

    @property
    def n_agents(self) -> int:
        return len(self.structure)

    @property
    def obs_dim(self) -> int:
        return observation_length(self.cfg)

    def reset(self, structure: Structure) -> np.ndarray:
        self.structure = structure.copy()
        self.t = 0
        n = len(self.structure)
        self._d_prev = np.zeros((n, 3))
        self._dg = np.zeros((n, 3))
        res = self.calc.evaluate(self.structure)
        self.last_energy = res.energy
        self._raw_fmax = max_force_norm(res.forces)
        self._scaled_g = scale_gradient(-res.forces, self.cfg.g_max)
        self.done = self._raw_fmax <= self.cfg.fmax
        self.done_reason = "SUCCESS" if self.done else None
        return self._observations()

    def _features(self) -> np.ndarray:
        cfg = self.cfg
        g = self._scaled_g
        radius = np.array(
            [sp.covalent_radius for sp in self.structure.species]
        )[self.structure.species_index]
        c = action_scale(g, cfg.c_max)
        log_gnorm = np.log(np.maximum(np.linalg.norm(g, axis=1), LOG_NORM_FLOOR))
        scalars = np.column_stack([radius, c, log_gnorm])
        variant = cfg.feature_variant
        if variant == "FULL":
            blocks = [scalars, g, self._d_prev, self._dg]
        elif variant == "FEAT6":
            blocks = [scalars[:, :2], self._d_prev]
        elif variant == "FEAT7":
            blocks = [scalars, g]
        elif variant == "FEAT8":
            blocks = [scalars, g, self._dg]
        else:  # FEAT9
            blocks = [scalars, g, self._d_prev]
        return np.hstack(blocks)

    def _observations(self) -> np.ndarray:
        cfg = self.cfg
        feats = self._features()
        nl = k_nearest(self.structure, cfg.k)
        n = len(self.structure)
        obs = np.hstack([
            feats,
            feats[nl.neighbor_atom].reshape(n, -1),
            nl.dist,
            nl.rel_vec.reshape(n, -1),
        ])
        self.last_raw_obs = obs
        if cfg.normalize_obs and self.obs_norm is not None:
            if self.training:
                self.obs_norm.update(obs)
            obs = self.obs_norm.normalize(obs)
        return obs

    def step(self, actions: np.ndarray) -> StepOutcome:
        if self.done:
            raise RuntimeError("episode is finished; call reset()")
        cfg = self.cfg
        actions = np.asarray(actions, dtype=float)
        if actions.shape != (self.n_agents, 3):
            raise ValueError(f"actions must have shape ({self.n_agents}, 3)")
        if not np.all(np.isfinite(actions)):
            raise ValueError("non-finite action")

        if cfg.action_variant == "SCALED":
            c = action_scale(self._scaled_g, cfg.c_max)
            disp = c[:, None] * actions
        else:
            disp = cfg.a_max * actions
        self.structure.positions = self.structure.positions + disp

        g_before = self._scaled_g
        try:
            res = self.calc.evaluate(self.structure)
            failed = False
        except Exception:
            res = None
            failed = True
        self.t += 1

        if failed:
            self.done = True
            self.done_reason = "TRUNCATED"
            n = self.n_agents
            return StepOutcome(
                observations=np.zeros((n, self.obs_dim)),
                rewards=np.zeros(n),
                done=True,
                done_reason="TRUNCATED",
                energy=float("nan"),
                calculator_failed=True,
            )

        self.last_energy = res.energy
        self._raw_fmax = max_force_norm(res.forces)
        g_after = scale_gradient(-res.forces, cfg.g_max)

        before = np.log(np.maximum(np.linalg.norm(g_before, axis=1), LOG_NORM_FLOOR))
        after = np.log(np.maximum(np.linalg.norm(g_after, axis=1), LOG_NORM_FLOOR))
        rewards = before - after
        if cfg.reward_variant == "PENALTY":
            rewards = rewards + cfg.penalty
        elif cfg.reward_variant == "SHARED":
            rewards = rewards + rewards.mean()

        self._dg = g_after - g_before
        self._d_prev = disp
        self._scaled_g = g_after

        if self._raw_fmax <= cfg.fmax:
            self.done = True
            self.done_reason = "SUCCESS"
        elif self.t >= cfg.max_steps:
            self.done = True
            self.done_reason = "TRUNCATED"
        else:
            self.done = False
            self.done_reason = None

        return StepOutcome(
            observations=self._observations(),
            rewards=rewards,
            done=self.done,
            done_reason=self.done_reason,
            energy=res.energy,
        )


def write_env_config(path, cfg: EnvConfig) -> None:
    with open(path, "w") as fh:
        for key, value in cfg.to_dict().items():
            fh.write(f"{key} = {value}\n")


def read_env_config(path) -> EnvConfig:
    """Parse a key/value text file into an EnvConfig; blank defaults apply."""
    # annotations are strings here (postponed evaluation)
    kinds = {f.name: f.type for f in fields(EnvConfig)}
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, _, raw = line.partition("=")
            key = key.strip()
            raw = raw.strip()
            if key not in kinds:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            kind = kinds[key]
            if kind == "int":
                values[key] = int(raw)
            elif kind == "float":
                values[key] = float(raw)
            elif kind == "bool":
                values[key] = raw.lower() in ("1", "true", "yes")
            else:
                values[key] = raw
    return EnvConfig(**values)


def relax_with_policy(s: Structure, calc, policy, tp: TerminationPolicy | None = None,
                      cfg: EnvConfig | None = None) -> RelaxationReport:
    """Relax one structure with a trained deterministic policy.

    `policy` maps a normalized observation batch to actions in (-1, 1)^3 and
    may carry a `normalizer` attribute holding frozen observation statistics.
    """
    tp = tp or TerminationPolicy()
    cfg = cfg or EnvConfig()
    cfg = EnvConfig(**{**cfg.to_dict(), "fmax": tp.fmax, "max_steps": tp.max_steps})
    calls0 = calc.stats.total_calls
    t0 = time.perf_counter()
    env = MacsEnv(calc, cfg, obs_norm=getattr(policy, "normalizer", None),
                  training=False)
    obs = env.reset(s)
    trace = [env.last_energy]
    failed = False
    while not env.done:
        outcome = env.step(policy(obs))
        obs = outcome.observations
        if outcome.calculator_failed:
            failed = True
            break
        trace.append(outcome.energy)
    success = env.done_reason == "SUCCESS"
    return RelaxationReport(
        success=success,
        steps=env.t,
        energy_calls=calc.stats.total_calls - calls0,
        wall_time=time.perf_counter() - t0,
        energy_trace=trace,
        final_structure=env.structure.copy(),
        final_fmax=env._raw_fmax,
        method="MACS",
        failure_reason=None if success else (
            "calculator error" if failed else "step budget exhausted"),
    )
