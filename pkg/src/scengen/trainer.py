"""Hybrid offline/online adversarial training.

The background-vehicle policy trains on a mix of simulation rollouts
(buffer B) and recorded driving data (buffer D). On top of the usual
twin-critic Bellman error, the critic loss carries a reverse
regularizer: it pushes Q down on recorded state-actions (mean) and up
on simulated ones (soft maximum via log-sum-exp),

    loss = beta * [ mean_D Q - (logsumexp_B Q - log |B|) ] + bellman(B u D)

applied to each critic. The implied optimal sampling weights over a
batch are softmax(Q), exposed as d_star. Setting beta=0 with an
all-simulation mix recovers plain SAC; a ratio of 0 trains purely
offline and never steps the environment.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from .env import (
    EnvConfig,
    EVENT_AV_COLLISION,
    action_limits,
    advance_scene,
    env_reset,
    env_step,
)
from .errors import ConfigError, StructuralError, TrainingError
from .metrics import compute_metrics, run_evaluation
from .nn import (
    MlpParams,
    OptState,
    Tensor,
    concat_cols,
    grads_of,
    load_arrays,
    minimum,
    mlp_apply,
    mlp_forward,
    mlp_init,
    mlp_tensors,
    opt_init,
    opt_step,
    polyak,
    sample_squashed,
    save_arrays,
    split_head,
    squashed_sample_graph,
)
from .policies import DrBvPolicy, LearnedAvPolicy, LearnedBvPolicy
from .replay import Batch, ReplayBuffer, mixed_batch, sim_batch_size
from .scenario import VehicleAction, flatten_scene

LOG_COLUMNS = (
    "step",
    "phase",
    "loss_critic",
    "loss_actor",
    "reg_term",
    "mean_q_real",
    "mean_q_sim",
    "eval_cr",
    "eval_cps",
    "eval_cpm",
    "av_avg_reward",
    "av_avg_speed",
)


@dataclass
class TrainConfig:
    beta: float = 1.0
    gamma: float = 0.99
    sim_real_ratio: float = 1.0  # sim:real mix; 0 = offline only, inf = online only
    batch_size: int = 256
    lr_actor: float = 3e-4
    lr_critic: float = 3e-4
    tau: float = 0.005
    entropy_alpha: object = "auto"  # "auto" or a fixed nonnegative float
    hidden: tuple = (256, 256)
    policy_activation: str = "tanh"
    critic_activation: str = "relu"
    warm_start: int = 1000
    steps_per_epoch: int = 1000
    epochs: int = 10
    buffer_capacity: int = 1_000_000
    eval_episodes: int = 10
    eval_mode: str = "stochastic"
    explore_episodes: float = 0.0  # fraction of online episodes rolled by the maneuver prior
    seed: int = 0

    def __post_init__(self):
        if self.beta < 0:
            raise ConfigError(f"beta must be nonnegative, got {self.beta}")
        if not 0.0 <= self.explore_episodes <= 1.0:
            raise ConfigError(
                f"explore_episodes must lie in [0, 1], got {self.explore_episodes}"
            )
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.sim_real_ratio < 0:
            raise ConfigError(f"sim/real ratio must be nonnegative, got {self.sim_real_ratio}")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be at least 2")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError(f"tau must lie in (0, 1], got {self.tau}")
        if self.entropy_alpha != "auto" and float(self.entropy_alpha) < 0:
            raise ConfigError("entropy_alpha must be 'auto' or a nonnegative value")
        if self.eval_mode not in ("stochastic", "deterministic"):
            raise ConfigError(f"unknown eval mode {self.eval_mode!r}")


def d_star(q: np.ndarray) -> np.ndarray:
    """Optimal per-sample weights: softmax of Q, shift-invariant."""
    q = np.asarray(q, dtype=np.float64)
    shifted = np.exp(q - q.max())
    return shifted / shifted.sum()


def scene_feature_map(n_bvs: int, env_cfg: EnvConfig) -> np.ndarray:
    """Linear map taking a flat scene state to O(1) learning features.

    BV positions become offsets from the AV; everything is scaled to
    roughly unit range. Folding this into a net's first layer at init
    keeps the raw state as the interface while conditioning training.
    """
    d = 4 * (n_bvs + 1)
    road = env_cfg.road
    a = np.zeros((d, d))
    a[0, 0] = 1.0 / road.length
    a[1, 1] = 1.0 / road.width
    a[2, 2] = 1.0 / env_cfg.v_max
    a[3, 3] = 1.0
    r_near = 50.0  # interaction range; matches the segment proximity scale
    for i in range(1, n_bvs + 1):
        o = 4 * i
        a[o + 0, o + 0] = 1.0 / r_near
        a[o + 0, 0] = -1.0 / r_near
        a[o + 1, o + 1] = 1.0 / road.width
        a[o + 1, 1] = -1.0 / road.width
        a[o + 2, o + 2] = 1.0 / env_cfg.v_max
        a[o + 3, o + 3] = 1.0
    return a


def action_feature_scale(limits) -> np.ndarray:
    """Per-dimension scale mapping the action box to width-2 features."""
    lo, hi = (np.asarray(v, dtype=np.float64) for v in limits)
    return 2.0 / (hi - lo)


def fold_first_layer(net: MlpParams, feature_map: np.ndarray) -> MlpParams:
    """Rewrite layer 0 so net(s) computes the old net on feature_map @ s."""
    if net.weights[0].shape[0] != feature_map.shape[1]:
        raise StructuralError(
            f"feature map takes dim {feature_map.shape[1]}, net expects {net.weights[0].shape[0]}"
        )
    folded = net.copy()
    folded.weights[0] = feature_map.T @ net.weights[0]
    return folded


@dataclass
class CriticPair:
    q1: MlpParams
    q2: MlpParams
    t1: MlpParams
    t2: MlpParams

    @classmethod
    def create(cls, sizes, activation, rng) -> "CriticPair":
        q1 = mlp_init(sizes, activation, rng)
        q2 = mlp_init(sizes, activation, rng)
        return cls(q1=q1, q2=q2, t1=q1.copy(), t2=q2.copy())

    def min_target(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        x = np.concatenate([states, actions], axis=1)
        return np.minimum(mlp_forward(self.t1, x)[:, 0], mlp_forward(self.t2, x)[:, 0])

    def min_online(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        x = np.concatenate([states, actions], axis=1)
        return np.minimum(mlp_forward(self.q1, x)[:, 0], mlp_forward(self.q2, x)[:, 0])

    def soft_update(self, tau: float) -> None:
        self.t1 = polyak(self.t1, self.q1, tau)
        self.t2 = polyak(self.t2, self.q2, tau)


class PolicyHandle:
    """Squashed-Gaussian policy over a box action space."""

    def __init__(self, net: MlpParams, limits):
        self.net = net
        self.limits = limits

    def sample_np(self, states: np.ndarray, rng, deterministic=False):
        head = split_head(mlp_forward(self.net, states))
        return sample_squashed(head, self.limits, rng=rng, deterministic=deterministic)


def bellman_targets(
    batch: Batch,
    critics: CriticPair,
    policy: PolicyHandle,
    gamma: float,
    alpha: float,
    rng,
) -> np.ndarray:
    """Soft Bellman backup y = r + gamma (1 - done) [min Q' - alpha log pi]."""
    a2, logp2 = policy.sample_np(batch.next_state, rng)
    tq = critics.min_target(batch.next_state, a2)
    return batch.reward + gamma * (1.0 - batch.done) * (tq - alpha * logp2)


def _critic_graph(leaves, activation, states, actions):
    q = mlp_apply(leaves, np.concatenate([states, actions], axis=1), activation)
    return q.reshape(-1)


def critic_loss_regularized(
    sim: Batch | None,
    real: Batch | None,
    critics: CriticPair,
    policy: PolicyHandle,
    beta: float,
    gamma: float,
    alpha: float,
    rng,
):
    """Regularized twin-critic loss on the mixed batch.

    Returns (loss, leaves1, leaves2, stats). Degenerate mixes drop the
    matching regularizer term: no real part drops the mean penalty, no
    sim part drops the log-sum-exp bonus; beta=0 with an all-sim batch
    is exactly the plain Bellman loss.
    """
    if sim is None and real is None:
        raise TrainingError("critic loss needs at least one batch part")
    parts = [p for p in (sim, real) if p is not None and len(p)]
    full = parts[0] if len(parts) == 1 else Batch.concat(parts)
    y = bellman_targets(full, critics, policy, gamma, alpha, rng)
    n_sim = len(sim) if sim is not None else 0

    leaves1 = mlp_tensors(critics.q1)
    leaves2 = mlp_tensors(critics.q2)
    act = critics.q1.activation
    stats = {"mean_q_real": math.nan, "mean_q_sim": math.nan}
    total = None
    reg_val = 0.0
    q_real_sum = 0.0
    q_sim_sum = 0.0
    for leaves in (leaves1, leaves2):
        q = _critic_graph(leaves, act, full.state, full.action)
        bell = (q - y).square().mean() * 0.5
        loss = bell
        if beta > 0.0:
            reg = None
            if n_sim < len(full):  # real part present: penalize its mean
                q_real = q.slice_rows(n_sim, len(full))
                reg = q_real.mean()
            if n_sim > 0:  # sim part present: reward its soft maximum
                q_sim = q.slice_rows(0, n_sim)
                lse = q_sim.logsumexp() - math.log(n_sim)
                reg = -lse if reg is None else reg - lse
            if reg is not None:
                loss = beta * reg + bell
                reg_val += reg.item()
        total = loss if total is None else total + loss
        if n_sim < len(full):
            q_real_sum += float(q.data[n_sim:].mean())
        if n_sim > 0:
            q_sim_sum += float(q.data[:n_sim].mean())
    if n_sim < len(full):
        stats["mean_q_real"] = q_real_sum / 2.0
    if n_sim > 0:
        stats["mean_q_sim"] = q_sim_sum / 2.0
    stats["reg_term"] = reg_val / 2.0
    stats["loss_critic"] = total.item()
    return total, leaves1, leaves2, stats


def critic_loss_sac(
    batch: Batch,
    critics: CriticPair,
    policy: PolicyHandle,
    gamma: float,
    alpha: float,
    rng,
):
    """Plain twin-critic Bellman loss (no regularizer)."""
    return critic_loss_regularized(batch, None, critics, policy, 0.0, gamma, alpha, rng)


def actor_loss(
    states: np.ndarray,
    critics,
    policy: PolicyHandle,
    alpha: float,
    rng,
):
    """Reparameterized policy loss mean[alpha log pi - min Q(s, a_pi)].

    critics may be a CriticPair or any object with a min_q(states, a_t)
    method building a Tensor from an action tensor.
    """
    leaves = mlp_tensors(policy.net)
    raw = mlp_apply(leaves, states, policy.net.activation)
    da = raw.shape[1] // 2
    eps = rng.standard_normal((states.shape[0], da))
    a_t, logp_t = squashed_sample_graph(raw, eps, policy.limits)
    if hasattr(critics, "min_q"):
        q_min = critics.min_q(states, a_t)
    else:
        x = concat_cols(Tensor(states), a_t)
        q1 = mlp_apply([Tensor(a) for a in critics.q1.arrays()], x, critics.q1.activation)
        q2 = mlp_apply([Tensor(a) for a in critics.q2.arrays()], x, critics.q2.activation)
        q_min = minimum(q1.reshape(-1), q2.reshape(-1))
    loss = (logp_t * alpha - q_min).mean()
    stats = {
        "loss_actor": loss.item(),
        "mean_log_prob": float(logp_t.data.mean()),
    }
    return loss, leaves, stats


class SacAgent:
    """Policy, twin critics, optimizers and entropy temperature."""

    def __init__(
        self,
        state_dim: int,
        action_dim: int,
        limits,
        cfg: TrainConfig,
        rng,
        state_map: np.ndarray | None = None,
    ):
        self.cfg = cfg
        self.state_dim = state_dim
        self.action_dim = action_dim
        policy_sizes = (state_dim, *cfg.hidden, 2 * action_dim)
        critic_sizes = (state_dim + action_dim, *cfg.hidden, 1)
        self.policy = PolicyHandle(
            mlp_init(policy_sizes, cfg.policy_activation, rng), limits
        )
        self.critics = CriticPair.create(critic_sizes, cfg.critic_activation, rng)
        if state_map is not None:
            sa_map = np.zeros((state_dim + action_dim,) * 2)
            sa_map[:state_dim, :state_dim] = state_map
            sa_map[state_dim:, state_dim:] = np.diag(action_feature_scale(limits))
            self.policy.net = fold_first_layer(self.policy.net, state_map)
            self.critics.q1 = fold_first_layer(self.critics.q1, sa_map)
            self.critics.q2 = fold_first_layer(self.critics.q2, sa_map)
            self.critics.t1 = self.critics.q1.copy()
            self.critics.t2 = self.critics.q2.copy()
        self.opt_actor = opt_init(self.policy.net.arrays(), cfg.lr_actor)
        self.opt_q1 = opt_init(self.critics.q1.arrays(), cfg.lr_critic)
        self.opt_q2 = opt_init(self.critics.q2.arrays(), cfg.lr_critic)
        self.auto_alpha = cfg.entropy_alpha == "auto"
        self.log_alpha = 0.0
        if not self.auto_alpha:
            self.log_alpha = math.log(max(float(cfg.entropy_alpha), 1e-12))
        self.opt_alpha = opt_init([np.zeros(())], cfg.lr_actor)
        self.target_entropy = -float(action_dim)

    @property
    def alpha(self) -> float:
        return math.exp(self.log_alpha)

    def update(self, sim: Batch | None, real: Batch | None, rng) -> dict:
        cfg = self.cfg
        loss_c, leaves1, leaves2, stats = critic_loss_regularized(
            sim, real, self.critics, self.policy, cfg.beta, cfg.gamma, self.alpha, rng
        )
        loss_c.backward()
        new1, self.opt_q1 = opt_step(
            self.critics.q1.arrays(), grads_of(leaves1), self.opt_q1
        )
        new2, self.opt_q2 = opt_step(
            self.critics.q2.arrays(), grads_of(leaves2), self.opt_q2
        )
        self.critics.q1 = self.critics.q1.replace_arrays(new1)
        self.critics.q2 = self.critics.q2.replace_arrays(new2)

        parts = [p for p in (sim, real) if p is not None and len(p)]
        states = (
            parts[0].state
            if len(parts) == 1
            else np.concatenate([p.state for p in parts])
        )
        loss_a, leaves_p, stats_a = actor_loss(
            states, self.critics, self.policy, self.alpha, rng
        )
        loss_a.backward()
        new_p, self.opt_actor = opt_step(
            self.policy.net.arrays(), grads_of(leaves_p), self.opt_actor
        )
        self.policy.net = self.policy.net.replace_arrays(new_p)
        stats.update(stats_a)

        if self.auto_alpha:
            # d/dlog_alpha of -log_alpha * (log_pi + target_entropy)
            g = -(stats_a["mean_log_prob"] + self.target_entropy)
            (new_la,), self.opt_alpha = opt_step(
                [np.asarray(self.log_alpha)], [np.asarray(g)], self.opt_alpha
            )
            self.log_alpha = float(new_la)
        stats["alpha"] = self.alpha

        self.critics.soft_update(cfg.tau)
        if not math.isfinite(stats["loss_critic"]) or not math.isfinite(
            stats["loss_actor"]
        ):
            raise TrainingError(
                f"non-finite loss (critic={stats['loss_critic']}, actor={stats['loss_actor']})"
            )
        return stats


def _rng_state(gen: np.random.Generator) -> dict:
    return gen.bit_generator.state


def _make_rng(seed_key) -> np.random.Generator:
    return np.random.default_rng(seed_key)


class BvTrainer:
    """Adversarial BV training against a frozen AV model."""

    def __init__(
        self,
        cfg: TrainConfig,
        env_cfg: EnvConfig,
        init,
        av_policy,
        offline: ReplayBuffer | None,
    ):
        self.cfg = cfg
        self.env_cfg = env_cfg
        self.init = init
        self.av_policy = av_policy
        self.offline = offline
        self.n_bvs = init.n_bvs
        self.state_dim = 4 * (self.n_bvs + 1)
        self.action_dim = 2 * self.n_bvs
        self.limits = action_limits(env_cfg, self.n_bvs)
        self.online = not (cfg.sim_real_ratio == 0)
        if not self.online and (offline is None or len(offline) == 0):
            raise TrainingError("offline-only training needs recorded transitions")
        if self.online:
            need = sim_batch_size(cfg.batch_size, cfg.sim_real_ratio)
            if cfg.warm_start < need:
                raise ConfigError(
                    f"warm_start={cfg.warm_start} cannot seed a sim batch of {need}"
                )
        self.rng_env = _make_rng([cfg.seed, 0])
        self.rng_update = _make_rng([cfg.seed, 1])
        self.sim = ReplayBuffer(cfg.buffer_capacity, self.state_dim, self.action_dim)
        self.agent = SacAgent(
            self.state_dim,
            self.action_dim,
            self.limits,
            cfg,
            _make_rng([cfg.seed, 2]),
            state_map=scene_feature_map(self.n_bvs, env_cfg),
        )
        self.step = 0
        self.epoch = 0
        self.env_steps = 0
        self.train_collisions = 0
        self.log: list = []
        self.best_eval = None  # (cr, epoch) of the best per-epoch evaluation
        self.best_net = None
        self._warmed = False
        self._scene_cache = None  # in-flight episode for single-step driving

    # -- rollout helpers --------------------------------------------------

    def _vec_to_actions(self, vec: np.ndarray):
        return tuple(
            VehicleAction(dv=vec[2 * i], dtheta=vec[2 * i + 1])
            for i in range(self.n_bvs)
        )

    def _random_action(self) -> np.ndarray:
        lo, hi = self.limits
        return self.rng_env.uniform(lo, hi)

    def warm_start(self) -> None:
        """Fill the sim buffer with exploratory BV behavior.

        Alternates episodes between coherent random maneuvers (constant
        drawn speed, coin-flip lane changes) and white-noise actions.
        The maneuvers actually reach the AV often enough to seed the
        buffer with collision bounties; the noise spreads action support.
        """
        if self._warmed or not self.online:
            self._warmed = True
            return
        prior = DrBvPolicy(self.env_cfg)
        steps = 0
        episode = 0
        while steps < self.cfg.warm_start:
            scene = env_reset(self.env_cfg, self.init, self.rng_env)
            self.av_policy.reset(scene, self.rng_env)
            use_prior = episode % 2 == 0
            if use_prior:
                prior.reset(scene, self.rng_env)
            episode += 1
            while True:
                if use_prior:
                    acts = prior.act(scene)
                    a = np.array([f for act in acts for f in (act.dv, act.dtheta)])
                else:
                    a = self._random_action()
                out = env_step(scene, self._vec_to_actions(a), self.av_policy, self.env_cfg)
                self.sim.push(
                    flatten_scene(scene),
                    a,
                    out.bv_reward,
                    flatten_scene(out.next_scene),
                    out.done,
                )
                steps += 1
                self.env_steps += 1
                scene = out.next_scene
                if out.event == EVENT_AV_COLLISION:
                    self.train_collisions += 1
                if out.done or steps >= self.cfg.warm_start:
                    break
        self._warmed = True

    def _update_once(self) -> dict:
        sim_buf = self.sim if self.online else None
        sim, real = mixed_batch(
            sim_buf,
            self.offline,
            self.cfg.sim_real_ratio,
            self.cfg.batch_size,
            self.rng_update,
        )
        stats = self.agent.update(sim, real, self.rng_update)
        self.step += 1
        row = {c: "" for c in LOG_COLUMNS}
        row.update(
            step=self.step,
            phase="bv",
            loss_critic=stats["loss_critic"],
            loss_actor=stats["loss_actor"],
            reg_term=stats["reg_term"],
            mean_q_real=stats["mean_q_real"],
            mean_q_sim=stats["mean_q_sim"],
        )
        self.log.append(row)
        return stats

    def run_epoch(self) -> None:
        """Collect whole episodes (online) and make one update per step.

        A configurable fraction of episodes is driven by the maneuver
        prior instead of the current policy; off-policy updates digest
        either, and the prior keeps collision bounties in the buffer even
        when the policy wanders into the road-departure local optimum.
        """
        self.warm_start()
        if self.online:
            prior = DrBvPolicy(self.env_cfg)
            collected = 0
            while collected < self.cfg.steps_per_epoch:
                scene = env_reset(self.env_cfg, self.init, self.rng_env)
                self.av_policy.reset(scene, self.rng_env)
                use_prior = self.rng_env.random() < self.cfg.explore_episodes
                if use_prior:
                    prior.reset(scene, self.rng_env)
                while True:
                    s = flatten_scene(scene)
                    if use_prior:
                        acts = prior.act(scene)
                        a = np.array([f for act in acts for f in (act.dv, act.dtheta)])
                    else:
                        a, _ = self.agent.policy.sample_np(s[None], self.rng_env)
                        a = a[0]
                    out = env_step(
                        scene, self._vec_to_actions(a), self.av_policy, self.env_cfg
                    )
                    self.sim.push(
                        s, a, out.bv_reward, flatten_scene(out.next_scene), out.done
                    )
                    self.env_steps += 1
                    collected += 1
                    self._update_once()
                    scene = out.next_scene
                    if out.event == EVENT_AV_COLLISION:
                        self.train_collisions += 1
                    if out.done:
                        break
        else:
            for _ in range(self.cfg.steps_per_epoch):
                self._update_once()
        self.epoch += 1

    def evaluate(self, n_episodes: int | None = None):
        n = n_episodes if n_episodes is not None else self.cfg.eval_episodes
        if n == 0:
            return None
        rng = _make_rng([self.cfg.seed, 3, self.epoch])
        bv = LearnedBvPolicy(self.agent.policy.net, self.env_cfg, mode=self.cfg.eval_mode)
        logs = run_evaluation(self.av_policy, bv, n, self.env_cfg, self.init, rng)
        report = compute_metrics(logs)
        if self.log:
            self.log[-1].update(
                eval_cr=report.cr, eval_cps=report.cps, eval_cpm=report.cpm_per_100m
            )
        if self.best_eval is None or report.cr > self.best_eval[0]:
            self.best_eval = (report.cr, self.epoch)
            self.best_net = self.agent.policy.net.copy()
        return report

    @property
    def policy_net(self):
        """Best-evaluating policy parameters seen so far, else the current ones.

        Epoch evaluations double as a model selector: desk-scale runs drift,
        so the published policy is the checkpoint that scored highest, not
        whatever the last gradient step left behind.
        """
        return self.best_net if self.best_net is not None else self.agent.policy.net

    def train(self):
        for _ in range(self.cfg.epochs):
            self.run_epoch()
            self.evaluate()
        return self

    # -- persistence --------------------------------------------------------

    def save(self, path) -> None:
        arrays = {}
        for prefix, net in (
            ("p", self.agent.policy.net),
            ("q1", self.agent.critics.q1),
            ("q2", self.agent.critics.q2),
            ("t1", self.agent.critics.t1),
            ("t2", self.agent.critics.t2),
        ):
            for i, w in enumerate(net.weights):
                arrays[f"{prefix}_w{i}"] = w
            for i, b in enumerate(net.biases):
                arrays[f"{prefix}_b{i}"] = b
        for name, opt in (
            ("oa", self.agent.opt_actor),
            ("o1", self.agent.opt_q1),
            ("o2", self.agent.opt_q2),
            ("ol", self.agent.opt_alpha),
        ):
            for i, m in enumerate(opt.m):
                arrays[f"{name}_m{i}"] = m
            for i, v in enumerate(opt.v):
                arrays[f"{name}_v{i}"] = v
        for name, arr in self.sim.state_dict().items():
            arrays[f"buf_{name}"] = arr
        meta = {
            "kind": "bv_trainer",
            "cfg": _cfg_to_json(self.cfg),
            "n_bvs": self.n_bvs,
            "step": self.step,
            "epoch": self.epoch,
            "env_steps": self.env_steps,
            "train_collisions": self.train_collisions,
            "log_alpha": self.agent.log_alpha,
            "opt_steps": {
                "oa": self.agent.opt_actor.step,
                "o1": self.agent.opt_q1.step,
                "o2": self.agent.opt_q2.step,
                "ol": self.agent.opt_alpha.step,
            },
            "n_layers": len(self.agent.policy.net.weights),
            "rng_env": _rng_state(self.rng_env),
            "rng_update": _rng_state(self.rng_update),
            "warmed": self._warmed,
        }
        save_arrays(path, arrays, meta)

    @classmethod
    def load(cls, path, env_cfg, init, av_policy, offline):
        arrays, meta = load_arrays(path)
        if meta.get("kind") != "bv_trainer":
            raise StructuralError(f"{path}: not a trainer checkpoint")
        cfg = _cfg_from_json(meta["cfg"])
        tr = cls(cfg, env_cfg, init, av_policy, offline)
        n = meta["n_layers"]

        def read_net(prefix, template) -> MlpParams:
            return MlpParams(
                weights=[arrays[f"{prefix}_w{i}"] for i in range(n)],
                biases=[arrays[f"{prefix}_b{i}"] for i in range(n)],
                activation=template.activation,
            )

        tr.agent.policy.net = read_net("p", tr.agent.policy.net)
        tr.agent.critics.q1 = read_net("q1", tr.agent.critics.q1)
        tr.agent.critics.q2 = read_net("q2", tr.agent.critics.q2)
        tr.agent.critics.t1 = read_net("t1", tr.agent.critics.t1)
        tr.agent.critics.t2 = read_net("t2", tr.agent.critics.t2)
        for name, opt in (
            ("oa", tr.agent.opt_actor),
            ("o1", tr.agent.opt_q1),
            ("o2", tr.agent.opt_q2),
            ("ol", tr.agent.opt_alpha),
        ):
            opt.m = [arrays[f"{name}_m{i}"] for i in range(len(opt.m))]
            opt.v = [arrays[f"{name}_v{i}"] for i in range(len(opt.v))]
            opt.step = meta["opt_steps"][name]
        tr.agent.log_alpha = float(meta["log_alpha"])
        if "buf_state" in arrays:
            tr.sim = ReplayBuffer.from_state(
                {k[len("buf_") :]: v for k, v in arrays.items() if k.startswith("buf_")},
                cfg.buffer_capacity,
            )
        tr.step = meta["step"]
        tr.epoch = meta["epoch"]
        tr.env_steps = meta["env_steps"]
        tr.train_collisions = meta["train_collisions"]
        tr.rng_env.bit_generator.state = meta["rng_env"]
        tr.rng_update.bit_generator.state = meta["rng_update"]
        tr._warmed = meta["warmed"]
        return tr


def load_checkpoint_nets(path):
    """Policy/critic nets plus buffered transitions from a trainer checkpoint.

    Returns (policy_net, q1, q2, buffer_arrays, meta) without needing an
    environment; buffer_arrays is empty when the run stored no rollouts.
    """
    arrays, meta = load_arrays(path)
    if meta.get("kind") != "bv_trainer":
        raise StructuralError(f"{path}: not a trainer checkpoint")
    n = meta["n_layers"]
    cfg = _cfg_from_json(meta["cfg"])

    def read_net(prefix, activation) -> MlpParams:
        return MlpParams(
            weights=[arrays[f"{prefix}_w{i}"] for i in range(n)],
            biases=[arrays[f"{prefix}_b{i}"] for i in range(n)],
            activation=activation,
        )

    policy = read_net("p", cfg.policy_activation)
    q1 = read_net("q1", cfg.critic_activation)
    q2 = read_net("q2", cfg.critic_activation)
    buf = {k[len("buf_") :]: v for k, v in arrays.items() if k.startswith("buf_")}
    return policy, q1, q2, buf, meta


def _cfg_to_json(cfg: TrainConfig) -> dict:
    d = asdict(cfg)
    d["hidden"] = list(cfg.hidden)
    if math.isinf(cfg.sim_real_ratio):
        d["sim_real_ratio"] = "inf"
    return d


def _cfg_from_json(d: dict) -> TrainConfig:
    d = dict(d)
    d["hidden"] = tuple(d["hidden"])
    if d["sim_real_ratio"] == "inf":
        d["sim_real_ratio"] = math.inf
    return TrainConfig(**d)


def train_bv(
    cfg: TrainConfig,
    env_cfg: EnvConfig,
    init,
    av_policy,
    offline: ReplayBuffer | None = None,
) -> BvTrainer:
    """Train an adversarial BV policy; returns the finished trainer."""
    return BvTrainer(cfg, env_cfg, init, av_policy, offline).train()


class AvTrainer:
    """SAC training of the AV driving policy against fixed BV behavior."""

    def __init__(self, cfg: TrainConfig, env_cfg: EnvConfig, init, bv_policy):
        # the AV agent is plain SAC: no offline mix, no regularizer
        self.cfg = replace(cfg, beta=0.0, sim_real_ratio=math.inf)
        self.env_cfg = env_cfg
        self.init = init
        self.bv_policy = bv_policy
        self.n_bvs = init.n_bvs
        self.state_dim = 4 * (self.n_bvs + 1)
        self.limits = action_limits(env_cfg, 1)
        self.rng_env = _make_rng([cfg.seed, 10])
        self.rng_update = _make_rng([cfg.seed, 11])
        self.sim = ReplayBuffer(cfg.buffer_capacity, self.state_dim, 2)
        self.agent = SacAgent(
            self.state_dim,
            2,
            self.limits,
            self.cfg,
            _make_rng([cfg.seed, 12]),
            state_map=scene_feature_map(self.n_bvs, env_cfg),
        )
        self.step = 0
        self.epoch = 0
        self.env_steps = 0
        self.log: list = []
        self._warmed = False
        self._scene_cache = None

    def warm_start(self) -> None:
        if self._warmed:
            return
        lo, hi = self.limits
        steps = 0
        while steps < self.cfg.warm_start:
            scene = env_reset(self.env_cfg, self.init, self.rng_env)
            self.bv_policy.reset(scene, self.rng_env)
            while True:
                a = self.rng_env.uniform(lo, hi)
                out = advance_scene(
                    scene,
                    VehicleAction(dv=a[0], dtheta=a[1]),
                    self.bv_policy.act(scene),
                    self.env_cfg,
                )
                self.sim.push(
                    flatten_scene(scene), a, out.av_reward,
                    flatten_scene(out.next_scene), out.done,
                )
                steps += 1
                self.env_steps += 1
                scene = out.next_scene
                if out.done or steps >= self.cfg.warm_start:
                    break
        self._warmed = True

    def run_epoch(self) -> None:
        self.warm_start()
        collected = 0
        while collected < self.cfg.steps_per_epoch:
            scene = env_reset(self.env_cfg, self.init, self.rng_env)
            self.bv_policy.reset(scene, self.rng_env)
            while True:
                s = flatten_scene(scene)
                a, _ = self.agent.policy.sample_np(s[None], self.rng_env)
                a = a[0]
                out = advance_scene(
                    scene,
                    VehicleAction(dv=a[0], dtheta=a[1]),
                    self.bv_policy.act(scene),
                    self.env_cfg,
                )
                self.sim.push(
                    s, a, out.av_reward, flatten_scene(out.next_scene), out.done
                )
                self.env_steps += 1
                collected += 1
                sim, real = mixed_batch(
                    self.sim, None, math.inf, self.cfg.batch_size, self.rng_update
                )
                stats = self.agent.update(sim, real, self.rng_update)
                self.step += 1
                row = {c: "" for c in LOG_COLUMNS}
                row.update(
                    step=self.step,
                    phase="av",
                    loss_critic=stats["loss_critic"],
                    loss_actor=stats["loss_actor"],
                    reg_term=stats["reg_term"],
                    mean_q_real=stats["mean_q_real"],
                    mean_q_sim=stats["mean_q_sim"],
                )
                self.log.append(row)
                scene = out.next_scene
                if out.done:
                    break
        self.epoch += 1

    def evaluate(self, n_episodes: int | None = None):
        n = n_episodes if n_episodes is not None else self.cfg.eval_episodes
        rng = _make_rng([self.cfg.seed, 13, self.epoch])
        av = LearnedAvPolicy(self.agent.policy.net, self.env_cfg, mode="deterministic")
        reward, speed = evaluate_av(
            av, self.bv_policy, n, self.env_cfg, self.init, rng
        )
        if self.log:
            self.log[-1].update(av_avg_reward=reward, av_avg_speed=speed)
        return reward, speed

    def train(self):
        for _ in range(self.cfg.epochs):
            self.run_epoch()
            self.evaluate()
        return self


def evaluate_av(av_policy, bv_policy, n_episodes, env_cfg, init, rng):
    """Mean per-frame AV reward and speed across evaluation episodes."""
    rewards = []
    speeds = []
    for _ in range(n_episodes):
        scene = env_reset(env_cfg, init, rng)
        av_policy.reset(scene, rng)
        bv_policy.reset(scene, rng)
        while True:
            out = env_step(scene, bv_policy.act(scene), av_policy, env_cfg)
            rewards.append(out.av_reward)
            speeds.append(out.next_scene.av.v)
            scene = out.next_scene
            if out.done:
                break
    return float(np.mean(rewards)), float(np.mean(speeds))


def train_av_sac(cfg: TrainConfig, env_cfg: EnvConfig, init, bv_policy) -> AvTrainer:
    """Train the AV driving policy with soft actor-critic."""
    return AvTrainer(cfg, env_cfg, init, bv_policy).train()


def finetune_alternate(
    bv_cfg: TrainConfig,
    av_cfg: TrainConfig,
    env_cfg: EnvConfig,
    init,
    av_net: MlpParams,
    offline: ReplayBuffer | None,
    phases: int,
    phase_len: int = 200,
    eval_episodes: int = 2,
    bv_net: MlpParams | None = None,
):
    """Alternate BV phases (AV frozen) and AV phases (BV frozen).

    Produces one log row per training step, tagged with its phase, each
    carrying the AV's average reward/speed against the current BVs and
    against the fixed fvdm yardstick.
    """
    from .policies import FvdmPolicy, RuleBvPolicy

    if phases < 1:
        raise ConfigError("need at least one phase")
    bv_steps_cfg = replace(bv_cfg, steps_per_epoch=phase_len, epochs=1)
    av_steps_cfg = replace(av_cfg, steps_per_epoch=phase_len, epochs=1)

    av_policy = LearnedAvPolicy(av_net, env_cfg, mode="deterministic")
    bv_trainer = BvTrainer(bv_steps_cfg, env_cfg, init, av_policy, offline)
    if bv_net is not None:
        bv_trainer.agent.policy.net = bv_net.copy()
    av_trainer: AvTrainer | None = None

    fvdm_bvs = RuleBvPolicy(lambda: FvdmPolicy(cfg=env_cfg))
    log: list = []
    global_step = 0

    def eval_row(av_for_eval, bv_for_eval, rng_seed) -> dict:
        rng = _make_rng(rng_seed)
        r_cur, v_cur = evaluate_av(
            av_for_eval, bv_for_eval, eval_episodes, env_cfg, init, rng
        )
        r_fv, v_fv = evaluate_av(
            av_for_eval, fvdm_bvs, eval_episodes, env_cfg, init, rng
        )
        return {
            "av_avg_reward": r_cur,
            "av_avg_speed": v_cur,
            "av_fvdm_reward": r_fv,
            "av_fvdm_speed": v_fv,
        }

    current_av_net = av_net
    for phase_idx in range(phases):
        is_bv_phase = phase_idx % 2 == 0
        if is_bv_phase:
            bv_trainer.av_policy = LearnedAvPolicy(
                current_av_net, env_cfg, mode="deterministic"
            )
            bv_trainer.warm_start()
            for _ in range(phase_len):
                # one env step + one gradient step, mirroring run_epoch
                _bv_single_step(bv_trainer)
                global_step += 1
                row = bv_trainer.log[-1].copy()
                row["step"] = global_step
                row["phase"] = "bv"
                frozen_av = LearnedAvPolicy(current_av_net, env_cfg, "deterministic")
                bv_eval = LearnedBvPolicy(
                    bv_trainer.agent.policy.net, env_cfg, mode="stochastic"
                )
                row.update(
                    eval_row(frozen_av, bv_eval, [bv_cfg.seed, 20, global_step])
                )
                log.append(row)
        else:
            bv_eval_net = bv_trainer.agent.policy.net
            bv_policy = LearnedBvPolicy(bv_eval_net, env_cfg, mode="stochastic")
            if av_trainer is None:
                av_trainer = AvTrainer(av_steps_cfg, env_cfg, init, bv_policy)
                av_trainer.agent.policy.net = current_av_net.copy()
            else:
                av_trainer.bv_policy = bv_policy
            av_trainer.warm_start()
            for _ in range(phase_len):
                _av_single_step(av_trainer)
                global_step += 1
                row = av_trainer.log[-1].copy()
                row["step"] = global_step
                row["phase"] = "av"
                av_eval = LearnedAvPolicy(
                    av_trainer.agent.policy.net, env_cfg, mode="deterministic"
                )
                row.update(
                    eval_row(av_eval, bv_policy, [av_cfg.seed, 21, global_step])
                )
                log.append(row)
            current_av_net = av_trainer.agent.policy.net
    return log, bv_trainer, av_trainer


def _bv_single_step(tr: BvTrainer) -> None:
    """Advance the BV trainer by exactly one env step and one update."""
    if tr._scene_cache is None:
        scene = env_reset(tr.env_cfg, tr.init, tr.rng_env)
        tr.av_policy.reset(scene, tr.rng_env)
        tr._scene_cache = scene
    scene = tr._scene_cache
    s = flatten_scene(scene)
    a, _ = tr.agent.policy.sample_np(s[None], tr.rng_env)
    a = a[0]
    out = env_step(scene, tr._vec_to_actions(a), tr.av_policy, tr.env_cfg)
    tr.sim.push(s, a, out.bv_reward, flatten_scene(out.next_scene), out.done)
    tr.env_steps += 1
    if out.event == EVENT_AV_COLLISION:
        tr.train_collisions += 1
    tr._scene_cache = None if out.done else out.next_scene
    tr._update_once()


def _av_single_step(tr: AvTrainer) -> None:
    if tr._scene_cache is None:
        scene = env_reset(tr.env_cfg, tr.init, tr.rng_env)
        tr.bv_policy.reset(scene, tr.rng_env)
        tr._scene_cache = scene
    scene = tr._scene_cache
    s = flatten_scene(scene)
    a, _ = tr.agent.policy.sample_np(s[None], tr.rng_env)
    a = a[0]
    out = advance_scene(
        scene, VehicleAction(dv=a[0], dtheta=a[1]), tr.bv_policy.act(scene), tr.env_cfg
    )
    tr.sim.push(s, a, out.av_reward, flatten_scene(out.next_scene), out.done)
    tr.env_steps += 1
    tr._scene_cache = None if out.done else out.next_scene
    sim, real = mixed_batch(tr.sim, None, math.inf, tr.cfg.batch_size, tr.rng_update)
    stats = tr.agent.update(sim, real, tr.rng_update)
    tr.step += 1
    row = {c: "" for c in LOG_COLUMNS}
    row.update(
        step=tr.step,
        phase="av",
        loss_critic=stats["loss_critic"],
        loss_actor=stats["loss_actor"],
        reg_term=stats["reg_term"],
        mean_q_real=stats["mean_q_real"],
        mean_q_sim=stats["mean_q_sim"],
    )
    tr.log.append(row)


def write_training_log(rows: list, path) -> None:
    """CSV dump of per-step training records."""
    if not rows:
        raise TrainingError("no training rows to write")
    columns = list(LOG_COLUMNS)
    extra = [k for k in rows[0] if k not in columns]
    columns += extra
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns)
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt_cell(row.get(k, "")) for k in columns})


def _fmt_cell(v):
    if isinstance(v, float):
        if math.isnan(v):
            return ""
        return f"{v:.6f}"
    return v
