import numpy as np
import pytest

from periopt.env import EnvConfig, observation_length
from periopt.sac import (
    Batch,
    DeterministicPolicy,
    Mlp,
    ReplayBuffer,
    SacTrainer,
    TrainerConfig,
    actor_grads,
    actor_loss,
    alpha_grad,
    alpha_loss,
    critic_grads,
    critic_loss,
    critic_targets,
    load_checkpoint,
    save_checkpoint,
    split_policy_head,
    squash,
)

OBS_DIM = 7


def tiny_nets(seed=0):
    rng = np.random.default_rng(seed)
    policy = Mlp([OBS_DIM, 4, 4, 6], rng)
    q1 = Mlp([OBS_DIM + 3, 4, 4, 1], rng)
    q2 = Mlp([OBS_DIM + 3, 4, 4, 1], rng)
    # jitter biases so no ReLU preactivation sits exactly on its kink,
    # which would invalidate the central finite differences
    for net in (policy, q1, q2):
        for i in (1, 3):
            net.params[i] = rng.normal(0.0, 0.1, size=net.params[i].shape)
    return policy, q1, q2, rng


def seeded_batch(rng, n=16):
    return Batch(
        obs=rng.normal(size=(n, OBS_DIM)),
        action=np.tanh(rng.normal(size=(n, 3))),
        reward=rng.normal(size=n),
        next_obs=rng.normal(size=(n, OBS_DIM)),
        done=(rng.uniform(size=n) < 0.2).astype(float),
    )


def fd_check(loss_fn, nets, h=1e-5, rel=1e-3):
    """Central finite differences of loss_fn over each net's parameters."""
    for net, analytic in nets:
        for p, g in zip(net.params, analytic):
            it = np.nditer(p, flags=["multi_index"])
            while not it.finished:
                idx = it.multi_index
                orig = p[idx]
                p[idx] = orig + h
                lp = loss_fn()
                p[idx] = orig - h
                lm = loss_fn()
                p[idx] = orig
                fd = (lp - lm) / (2.0 * h)
                scale = max(abs(fd), abs(g[idx]), 1e-6)
                assert abs(fd - g[idx]) / scale < rel, (
                    f"grad mismatch at {idx}: fd={fd} analytic={g[idx]}"
                )
                it.iternext()


class TestMlp:
    def test_forward_shapes(self):
        rng = np.random.default_rng(0)
        net = Mlp([5, 8, 8, 2], rng)
        out, _ = net.forward(rng.normal(size=(10, 5)))
        assert out.shape == (10, 2)

    def test_backward_matches_fd(self):
        rng = np.random.default_rng(1)
        net = Mlp([5, 4, 4, 2], rng)
        x = rng.normal(size=(6, 5))
        w = rng.normal(size=(6, 2))  # fixed projection to a scalar loss

        def loss():
            out, _ = net.forward(x)
            return float(np.sum(out * w))

        out, cache = net.forward(x)
        grads, _ = net.backward(cache, w)
        fd_check(loss, [(net, grads)])


class TestPolicyOutput:
    def test_mean_mode_zero_params_gives_origin(self):
        trainer = SacTrainer(EnvConfig(k=1), TrainerConfig(hidden=(4, 4)))
        for p in trainer.policy.params:
            p[...] = 0.0
        obs = np.random.default_rng(0).normal(size=(5, trainer.obs_dim))
        np.testing.assert_array_equal(trainer.act(obs, "MEAN"), 0.0)

    def test_sampled_actions_strictly_inside_cube(self):
        rng = np.random.default_rng(2)
        # scale kept moderate: float64 tanh saturates to exactly 1.0 far out
        mean = rng.normal(scale=2.0, size=(200, 3))
        log_std = rng.uniform(-2, 0, size=(200, 3))
        a, _, _ = squash(mean, log_std, rng.standard_normal((200, 3)))
        assert np.all(np.abs(a) < 1.0)

    def test_log_std_clamped(self):
        out = np.array([[0.0, 0, 0, -50.0, 0.0, 50.0]])
        _, log_std, mask = split_policy_head(out)
        np.testing.assert_array_equal(log_std[0], [-20.0, 0.0, 2.0])
        np.testing.assert_array_equal(mask[0], [False, True, False])

    def test_seeded_sampling_reproducible(self):
        a = SacTrainer(EnvConfig(k=1), TrainerConfig(hidden=(4, 4), seed=7))
        b = SacTrainer(EnvConfig(k=1), TrainerConfig(hidden=(4, 4), seed=7))
        obs = np.random.default_rng(0).normal(size=(3, a.obs_dim))
        np.testing.assert_array_equal(a.act(obs), b.act(obs))

    def test_non_finite_params_rejected(self):
        trainer = SacTrainer(EnvConfig(k=1), TrainerConfig(hidden=(4, 4)))
        trainer.policy.params[0][0, 0] = np.nan
        with pytest.raises(ValueError, match="finite"):
            trainer.act(np.zeros((1, trainer.obs_dim)))


class TestGradientOracles:
    def test_critic_gradients_match_fd(self):
        policy, q1, q2, rng = tiny_nets(3)
        batch = seeded_batch(rng)
        y = rng.normal(size=len(batch.reward))
        loss, g1, g2 = critic_grads(q1, q2, batch, y)
        assert loss == pytest.approx(critic_loss(q1, q2, batch, y))
        fd_check(lambda: critic_loss(q1, q2, batch, y), [(q1, g1), (q2, g2)])

    def test_actor_gradients_match_fd(self):
        policy, q1, q2, rng = tiny_nets(4)
        batch = seeded_batch(rng)
        noise = rng.standard_normal((len(batch.reward), 3))
        alpha = 0.2
        loss, grads, _ = actor_grads(policy, q1, q2, batch.obs, noise, alpha)
        assert loss == pytest.approx(
            actor_loss(policy, q1, q2, batch.obs, noise, alpha)
        )
        fd_check(
            lambda: actor_loss(policy, q1, q2, batch.obs, noise, alpha),
            [(policy, grads)],
        )

    def test_alpha_gradient_matches_fd(self):
        h = 1e-5
        for log_alpha, mean_logp in [(-1.0, -4.0), (0.5, -12.0), (0.0, -8.0)]:
            fd = (
                alpha_loss(log_alpha + h, mean_logp, -8.0)
                - alpha_loss(log_alpha - h, mean_logp, -8.0)
            ) / (2 * h)
            assert alpha_grad(log_alpha, mean_logp, -8.0) == pytest.approx(
                fd, rel=1e-6, abs=1e-9
            )


class TestTargets:
    def test_done_kills_bootstrap(self):
        policy, q1, q2, rng = tiny_nets(5)
        batch = seeded_batch(rng)
        batch.done = np.ones_like(batch.done)
        noise = rng.standard_normal((len(batch.reward), 3))
        y = critic_targets(policy, q1, q2, batch, 0.2, 0.995, noise)
        np.testing.assert_array_equal(y, batch.reward)

    def test_gamma_zero_reduces_to_reward(self):
        policy, q1, q2, rng = tiny_nets(6)
        batch = seeded_batch(rng)
        noise = rng.standard_normal((len(batch.reward), 3))
        y = critic_targets(policy, q1, q2, batch, 0.2, 0.0, noise)
        np.testing.assert_allclose(y, batch.reward, atol=1e-15)

    def test_twin_min_bounds_either_head(self):
        policy, q1, q2, rng = tiny_nets(7)
        batch = seeded_batch(rng)
        batch.done = np.zeros_like(batch.done)
        noise = rng.standard_normal((len(batch.reward), 3))
        y_min = critic_targets(policy, q1, q2, batch, 0.0, 1.0, noise)
        y_q1 = critic_targets(policy, q1, q1, batch, 0.0, 1.0, noise)
        y_q2 = critic_targets(policy, q2, q2, batch, 0.0, 1.0, noise)
        assert np.all(y_min <= y_q1 + 1e-12)
        assert np.all(y_min <= y_q2 + 1e-12)


class TestReplayBuffer:
    def test_capacity_and_fifo(self):
        buf = ReplayBuffer(10)
        for i in range(13):
            buf.add(np.full((1, 2), i), np.zeros((1, 3)), [float(i)],
                    np.zeros((1, 2)), 0.0)
        assert len(buf) == 10
        # oldest three evicted: rewards 0,1,2 gone
        rewards = set()
        rng = np.random.default_rng(0)
        for _ in range(50):
            rewards.update(buf.sample(10, rng).reward.tolist())
        assert rewards == {float(i) for i in range(3, 13)}

    def test_batched_insert(self):
        buf = ReplayBuffer(100)
        buf.add(np.zeros((5, 3)), np.zeros((5, 3)), np.arange(5.0),
                np.zeros((5, 3)), 0.0)
        assert len(buf) == 5

    def test_empty_sample_rejected(self):
        with pytest.raises(ValueError):
            ReplayBuffer(5).sample(1, np.random.default_rng(0))


class TestPolyak:
    def make(self):
        return SacTrainer(EnvConfig(k=1), TrainerConfig(hidden=(4, 4)))

    def test_tau_zero_freezes_targets(self):
        t = self.make()
        t.cfg.tau = 0.0
        before = [p.copy() for p in t.q1_target.params]
        for p in t.q1.params:
            p += 1.0
        t._polyak()
        for b, p in zip(before, t.q1_target.params):
            np.testing.assert_array_equal(b, p)

    def test_tau_one_copies_online(self):
        t = self.make()
        t.cfg.tau = 1.0
        for p in t.q1.params:
            p += 1.0
        t._polyak()
        for o, p in zip(t.q1.params, t.q1_target.params):
            np.testing.assert_allclose(o, p, atol=1e-15)

    def test_interval_gates_updates(self):
        t = SacTrainer(
            EnvConfig(k=1),
            TrainerConfig(hidden=(4, 4), batch_size=4,
                          target_update_interval=3),
        )
        rng = np.random.default_rng(0)
        t.buffer.add(rng.normal(size=(8, t.obs_dim)),
                     np.tanh(rng.normal(size=(8, 3))), rng.normal(size=8),
                     rng.normal(size=(8, t.obs_dim)), 0.0)
        before = [p.copy() for p in t.q1_target.params]
        t.update()
        t.update()
        for b, p in zip(before, t.q1_target.params):
            np.testing.assert_array_equal(b, p)
        t.update()
        assert any(
            not np.array_equal(b, p)
            for b, p in zip(before, t.q1_target.params)
        )


class TestUpdateStep:
    def test_losses_finite_and_alpha_positive(self):
        t = SacTrainer(EnvConfig(k=1),
                       TrainerConfig(hidden=(8, 8), batch_size=16))
        rng = np.random.default_rng(1)
        t.buffer.add(rng.normal(size=(64, t.obs_dim)),
                     np.tanh(rng.normal(size=(64, 3))), rng.normal(size=64),
                     rng.normal(size=(64, t.obs_dim)),
                     (rng.uniform(size=64) < 0.1).astype(float))
        for _ in range(5):
            losses = t.update()
            assert np.isfinite(losses["critic_loss"])
            assert np.isfinite(losses["actor_loss"])
            assert losses["alpha"] > 0.0


class TestCheckpoint:
    def trained_trainer(self, seed=0, env_cfg=None):
        t = SacTrainer(env_cfg or EnvConfig(k=2),
                       TrainerConfig(hidden=(8, 8), batch_size=8, seed=seed))
        rng = np.random.default_rng(seed)
        t.obs_norm.update(rng.normal(size=(30, t.obs_dim)))
        t.buffer.add(rng.normal(size=(32, t.obs_dim)),
                     np.tanh(rng.normal(size=(32, 3))), rng.normal(size=32),
                     rng.normal(size=(32, t.obs_dim)), 0.0)
        t.update()
        return t

    def test_bitwise_roundtrip(self, tmp_path):
        t = self.trained_trainer()
        path = tmp_path / "ckpt.bin"
        save_checkpoint(path, t)
        back = load_checkpoint(path)
        for a, b in zip(t.policy.params + t.q1.params + t.q2.params,
                        back.policy.params + back.q1.params + back.q2.params):
            np.testing.assert_array_equal(a, b)
        assert back.log_alpha == t.log_alpha
        assert back.obs_norm.count == t.obs_norm.count

    def test_mean_actions_identical_after_reload(self, tmp_path):
        t = self.trained_trainer(1)
        path = tmp_path / "ckpt.bin"
        save_checkpoint(path, t)
        back = load_checkpoint(path)
        obs = np.random.default_rng(9).normal(size=(100, t.obs_dim))
        np.testing.assert_array_equal(t.act(obs, "MEAN"),
                                      back.act(obs, "MEAN"))

    def test_variant_mismatch_refused(self, tmp_path):
        t = self.trained_trainer(2, EnvConfig(k=2, feature_variant="FEAT9"))
        path = tmp_path / "ckpt.bin"
        save_checkpoint(path, t)
        with pytest.raises(ValueError, match="mismatch"):
            load_checkpoint(path, env_cfg=EnvConfig(k=2))

    def test_corrupt_file_rejected(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"not json\n\x00\x01")
        with pytest.raises(ValueError):
            load_checkpoint(path)

    def test_truncated_file_rejected(self, tmp_path):
        t = self.trained_trainer(3)
        path = tmp_path / "ckpt.bin"
        save_checkpoint(path, t)
        data = path.read_bytes()
        path.write_bytes(data[:-100])
        with pytest.raises(ValueError, match="truncated"):
            load_checkpoint(path)

    def test_deterministic_policy_wrapper(self, tmp_path):
        t = self.trained_trainer(4)
        pol = t.make_policy()
        assert isinstance(pol, DeterministicPolicy)
        obs = np.random.default_rng(0).normal(size=(4, t.obs_dim))
        np.testing.assert_allclose(pol(obs), t.act(obs, "MEAN"), atol=1e-15)
        assert pol.normalizer is t.obs_norm


class TestObsDimWiring:
    def test_network_input_matches_env_layout(self):
        cfg = EnvConfig(k=5, feature_variant="FEAT7")
        t = SacTrainer(cfg, TrainerConfig(hidden=(4, 4)))
        assert t.policy.sizes[0] == observation_length(cfg)
        assert t.q1.sizes[0] == observation_length(cfg) + 3
