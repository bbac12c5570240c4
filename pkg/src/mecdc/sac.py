"""Soft actor-critic with a squashed-Gaussian policy and twin target critics.

Hand-rolled on top of torch autograd: tanh-squashed reparameterized policy,
two Q critics with slowly-tracking target copies, entropy-regularized targets
with the twin-minimum, uniform replay.  Losses are exposed as deterministic
functions of (batch, noise) so gradients can be checked against finite
differences.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
ATANH_EPS = 1e-6  # actions at exactly +/-1 are pulled inside by this margin

CHECKPOINT_FORMAT = 1


@dataclass(frozen=True)
class MlpSpec:
    """Fully-connected trunk description."""

    input_dim: int
    hidden_dims: tuple[int, ...] = (256, 128)
    output_dim: int = 1

    def __post_init__(self):
        if not self.hidden_dims:
            raise ValueError("hidden_dims must be nonempty")
        if min((self.input_dim, self.output_dim) + self.hidden_dims) <= 0:
            raise ValueError("all MlpSpec dimensions must be positive")


@dataclass(frozen=True)
class SacHyper:
    """Training constants (defaults follow the reference configuration)."""

    gamma: float = 0.9
    soft_update_coeff: float = 0.005
    lr_actor: float = 3e-4
    lr_critic: float = 1e-4
    buffer_capacity: int = 1_000_000
    entropy_alpha: float = 0.2
    batch_size: int = 256
    warmup_steps: int = 3000
    updates_per_step: int = 1
    grad_clip: float = 10.0

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0.0 < self.soft_update_coeff <= 1.0:
            raise ValueError("soft_update_coeff must lie in (0, 1]")
        if self.entropy_alpha < 0.0:
            raise ValueError("entropy_alpha must be >= 0")


def _trunk(spec: MlpSpec) -> tuple[nn.Sequential, int]:
    layers: list[nn.Module] = []
    prev = spec.input_dim
    for width in spec.hidden_dims:
        layers += [nn.Linear(prev, width), nn.ReLU()]
        prev = width
    return nn.Sequential(*layers), prev


class GaussianPolicy(nn.Module):
    """tanh-squashed diagonal Gaussian over the normalized action box."""

    def __init__(self, spec: MlpSpec):
        super().__init__()
        self.spec = spec
        self.trunk, width = _trunk(spec)
        self.mean_head = nn.Linear(width, spec.output_dim)
        self.log_std_head = nn.Linear(width, spec.output_dim)

    def forward(self, state: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        hidden = self.trunk(state)
        mean = self.mean_head(hidden)
        log_std = torch.clamp(self.log_std_head(hidden), LOG_STD_MIN, LOG_STD_MAX)
        return mean, log_std

    @staticmethod
    def _log_prob_from_pre(pre: torch.Tensor, mean: torch.Tensor, log_std: torch.Tensor) -> torch.Tensor:
        std = log_std.exp()
        gauss = -0.5 * ((pre - mean) / std) ** 2 - log_std - 0.5 * math.log(2.0 * math.pi)
        # log(1 - tanh(x)^2) = 2 (log 2 - x - softplus(-2x)); exact and stable.
        squash = 2.0 * (math.log(2.0) - pre - F.softplus(-2.0 * pre))
        return (gauss - squash).sum(dim=-1)

    def sample(
        self, state: torch.Tensor, noise: torch.Tensor | None = None
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Reparameterized draw: action = tanh(mean + std * noise), with log prob."""
        mean, log_std = self(state)
        if noise is None:
            noise = torch.randn_like(mean)
        pre = mean + log_std.exp() * noise
        return torch.tanh(pre), self._log_prob_from_pre(pre, mean, log_std)

    def deterministic(self, state: torch.Tensor) -> torch.Tensor:
        mean, _ = self(state)
        return torch.tanh(mean)

    def log_prob(self, state: torch.Tensor, action: torch.Tensor) -> torch.Tensor:
        mean, log_std = self(state)
        clamped = torch.clamp(action, -1.0 + ATANH_EPS, 1.0 - ATANH_EPS)
        pre = torch.atanh(clamped)
        return self._log_prob_from_pre(pre, mean, log_std)


class QCritic(nn.Module):
    """State-action value network."""

    def __init__(self, spec: MlpSpec):
        super().__init__()
        self.spec = spec
        self.net, width = _trunk(spec)
        self.head = nn.Linear(width, 1)

    def forward(self, state: torch.Tensor, action: torch.Tensor) -> torch.Tensor:
        return self.head(self.net(torch.cat([state, action], dim=-1))).squeeze(-1)


class ReplayBuffer:
    """Uniform ring buffer with FIFO eviction; batches sample without replacement."""

    def __init__(self, capacity: int, state_dim: int, action_dim: int, seed: int = 0):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.rng = np.random.default_rng(seed)
        self._alloc = min(capacity, 4096)
        self._states = np.zeros((self._alloc, state_dim), dtype=np.float32)
        self._actions = np.zeros((self._alloc, action_dim), dtype=np.float32)
        self._rewards = np.zeros(self._alloc, dtype=np.float32)
        self._next_states = np.zeros((self._alloc, state_dim), dtype=np.float32)
        self._dones = np.zeros(self._alloc, dtype=np.float32)
        self.size = 0
        self.cursor = 0

    def __len__(self) -> int:
        return self.size

    def _grow(self) -> None:
        new_alloc = min(self.capacity, self._alloc * 2)
        for name in ("_states", "_actions", "_rewards", "_next_states", "_dones"):
            old = getattr(self, name)
            grown = np.zeros((new_alloc,) + old.shape[1:], dtype=old.dtype)
            grown[: self.size] = old[: self.size]
            setattr(self, name, grown)
        self._alloc = new_alloc

    def push(self, state, action, reward, next_state, done) -> None:
        if self.cursor == self._alloc and self._alloc < self.capacity:
            self._grow()
        idx = self.cursor
        self._states[idx] = state
        self._actions[idx] = action
        self._rewards[idx] = reward
        self._next_states[idx] = next_state
        self._dones[idx] = float(done)
        self.size = min(self.size + 1, self.capacity)
        self.cursor = (self.cursor + 1) % self.capacity if self.size == self.capacity else self.cursor + 1

    def sample(self, batch_size: int) -> dict[str, np.ndarray]:
        if batch_size > self.size:
            raise ValueError("not enough transitions buffered")
        idx = self.rng.choice(self.size, size=batch_size, replace=False)
        return {
            "state": self._states[idx],
            "action": self._actions[idx],
            "reward": self._rewards[idx],
            "next_state": self._next_states[idx],
            "done": self._dones[idx],
        }


class SacAgent:
    """Networks, optimizers and the three update rules."""

    def __init__(
        self,
        state_dim: int,
        action_dim: int,
        hyper: SacHyper = SacHyper(),
        hidden_dims: tuple[int, ...] = (256, 128),
        seed: int = 0,
        dtype: torch.dtype = torch.float32,
    ):
        torch.manual_seed(seed)
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.hyper = hyper
        self.hidden_dims = tuple(hidden_dims)
        self.dtype = dtype
        policy_spec = MlpSpec(state_dim, self.hidden_dims, action_dim)
        critic_spec = MlpSpec(state_dim + action_dim, self.hidden_dims, 1)
        self.policy = GaussianPolicy(policy_spec).to(dtype)
        self.q1 = QCritic(critic_spec).to(dtype)
        self.q2 = QCritic(critic_spec).to(dtype)
        self.q1_target = QCritic(critic_spec).to(dtype)
        self.q2_target = QCritic(critic_spec).to(dtype)
        self.q1_target.load_state_dict(self.q1.state_dict())
        self.q2_target.load_state_dict(self.q2.state_dict())
        for net in (self.q1_target, self.q2_target):
            for param in net.parameters():
                param.requires_grad_(False)
        self.policy_opt = torch.optim.Adam(self.policy.parameters(), lr=hyper.lr_actor)
        self.q1_opt = torch.optim.Adam(self.q1.parameters(), lr=hyper.lr_critic)
        self.q2_opt = torch.optim.Adam(self.q2.parameters(), lr=hyper.lr_critic)
        self.update_count = 0

    # -- acting ------------------------------------------------------------

    def _tensor(self, value) -> torch.Tensor:
        return torch.as_tensor(np.asarray(value), dtype=self.dtype)

    def sample_action(self, state, mode: str = "stochastic") -> np.ndarray:
        if mode not in ("stochastic", "deterministic"):
            raise ValueError(f"unknown action mode {mode!r}")
        state_t = self._tensor(state)
        if not torch.isfinite(state_t).all():
            raise ValueError("state contains non-finite entries")
        with torch.no_grad():
            if mode == "deterministic":
                action = self.policy.deterministic(state_t)
            else:
                action, _ = self.policy.sample(state_t)
        return action.cpu().numpy()

    def log_prob(self, state, action) -> float:
        with torch.no_grad():
            value = self.policy.log_prob(self._tensor(state), self._tensor(action))
        return float(value)

    # -- losses (deterministic given batch + noise; used by the FD checks) --

    def _batch_tensors(self, batch) -> dict[str, torch.Tensor]:
        return {key: self._tensor(value) for key, value in batch.items()}

    def _critic_targets_t(
        self, tensors: dict[str, torch.Tensor], next_noise: torch.Tensor | None
    ) -> torch.Tensor:
        with torch.no_grad():
            next_action, next_logp = self.policy.sample(tensors["next_state"], next_noise)
            q_next = torch.min(
                self.q1_target(tensors["next_state"], next_action),
                self.q2_target(tensors["next_state"], next_action),
            )
            soft_value = q_next - self.hyper.entropy_alpha * next_logp
            return tensors["reward"] + self.hyper.gamma * (1.0 - tensors["done"]) * soft_value

    def critic_targets(
        self, batch, next_noise: torch.Tensor | None = None
    ) -> torch.Tensor:
        """r + gamma (1 - done) (min_j targetQ_j(s', a') - alpha log pi(a'|s'))."""
        return self._critic_targets_t(self._batch_tensors(batch), next_noise)

    def critic_loss(self, batch, next_noise: torch.Tensor | None = None) -> torch.Tensor:
        tensors = self._batch_tensors(batch)
        target = self._critic_targets_t(tensors, next_noise)
        loss1 = 0.5 * ((self.q1(tensors["state"], tensors["action"]) - target) ** 2).mean()
        loss2 = 0.5 * ((self.q2(tensors["state"], tensors["action"]) - target) ** 2).mean()
        return loss1 + loss2

    def policy_loss(self, batch, noise: torch.Tensor | None = None) -> torch.Tensor:
        tensors = self._batch_tensors(batch)
        action, logp = self.policy.sample(tensors["state"], noise)
        q_min = torch.min(
            self.q1(tensors["state"], action), self.q2(tensors["state"], action)
        )
        return (self.hyper.entropy_alpha * logp - q_min).mean()

    # -- updates -------------------------------------------------------------

    def critic_update(self, batch, next_noise: torch.Tensor | None = None) -> float:
        if len(batch["state"]) == 0:
            raise ValueError("empty batch")
        loss = self.critic_loss(batch, next_noise)
        self.q1_opt.zero_grad()
        self.q2_opt.zero_grad()
        loss.backward()
        nn.utils.clip_grad_norm_(self.q1.parameters(), self.hyper.grad_clip)
        nn.utils.clip_grad_norm_(self.q2.parameters(), self.hyper.grad_clip)
        self.q1_opt.step()
        self.q2_opt.step()
        return float(loss.detach())

    def policy_update(self, batch, noise: torch.Tensor | None = None) -> float:
        if len(batch["state"]) == 0:
            raise ValueError("empty batch")
        for net in (self.q1, self.q2):
            for param in net.parameters():
                param.requires_grad_(False)
        loss = self.policy_loss(batch, noise)
        self.policy_opt.zero_grad()
        loss.backward()
        nn.utils.clip_grad_norm_(self.policy.parameters(), self.hyper.grad_clip)
        self.policy_opt.step()
        for net in (self.q1, self.q2):
            for param in net.parameters():
                param.requires_grad_(True)
        return float(loss.detach())

    def soft_update(self) -> None:
        coeff = self.hyper.soft_update_coeff
        with torch.no_grad():
            for target, live in (
                (self.q1_target, self.q1),
                (self.q2_target, self.q2),
            ):
                for t_param, param in zip(target.parameters(), live.parameters()):
                    t_param.mul_(1.0 - coeff).add_(param, alpha=coeff)

    # -- persistence -----------------------------------------------------------

    def save(self, path: str | Path, extra: dict | None = None) -> None:
        payload = {
            "format_version": CHECKPOINT_FORMAT,
            "state_dim": self.state_dim,
            "action_dim": self.action_dim,
            "hidden_dims": self.hidden_dims,
            "hyper": asdict(self.hyper),
            "policy": self.policy.state_dict(),
            "q1": self.q1.state_dict(),
            "q2": self.q2.state_dict(),
            "q1_target": self.q1_target.state_dict(),
            "q2_target": self.q2_target.state_dict(),
            "extra": extra or {},
        }
        torch.save(payload, str(path))

    @classmethod
    def load(cls, path: str | Path) -> "SacAgent":
        payload = torch.load(str(path), map_location="cpu", weights_only=False)
        if payload.get("format_version") != CHECKPOINT_FORMAT:
            raise ValueError(
                f"unsupported checkpoint format {payload.get('format_version')!r}"
            )
        agent = cls(
            payload["state_dim"],
            payload["action_dim"],
            SacHyper(**payload["hyper"]),
            hidden_dims=tuple(payload["hidden_dims"]),
        )
        agent.policy.load_state_dict(payload["policy"])
        agent.q1.load_state_dict(payload["q1"])
        agent.q2.load_state_dict(payload["q2"])
        agent.q1_target.load_state_dict(payload["q1_target"])
        agent.q2_target.load_state_dict(payload["q2_target"])
        return agent


@dataclass
class EpisodeRecord:
    episode: int
    sum_reward: float
    latency: float
    dc: float
    penalty: float
    energy_joules: float


def episode_seed(base_seed: int, episode: int) -> int:
    """Deterministic, well-mixed per-episode world seed."""
    return int(np.random.SeedSequence([base_seed, episode]).generate_state(1)[0])


def train(
    env_factory,
    hyper: SacHyper = SacHyper(),
    episodes: int = 100,
    *,
    seed: int = 0,
    hidden_dims: tuple[int, ...] = (256, 128),
    agent: SacAgent | None = None,
    action_transform=None,
    callback=None,
    checkpoint_dir: str | Path | None = None,
    checkpoint_every: int = 0,
) -> tuple[SacAgent, list[EpisodeRecord]]:
    """Run the training loop: act, associate (inside the env), store, update.

    ``action_transform(world, action) -> action`` lets a caller override
    action components before they hit the environment (the stored transition
    keeps the executed action).  Fixed ``seed`` makes the episode reward
    sequence reproducible within one build.
    """
    env = env_factory()
    if agent is None:
        agent = SacAgent(env.state_dim, env.action_dim, hyper, hidden_dims, seed=seed)
    elif (agent.state_dim, agent.action_dim) != (env.state_dim, env.action_dim):
        raise ValueError(
            f"agent dims ({agent.state_dim}, {agent.action_dim}) do not match "
            f"env dims ({env.state_dim}, {env.action_dim})"
        )
    warmup_rng = np.random.default_rng(seed)
    buffer = getattr(agent, "buffer", None)
    if buffer is None:
        buffer = ReplayBuffer(
            hyper.buffer_capacity, env.state_dim, env.action_dim, seed=seed + 1
        )
        agent.buffer = buffer
    records: list[EpisodeRecord] = []
    global_step = 0
    for episode in range(episodes):
        state = env.reset(seed=episode_seed(seed, episode))
        sums = {"reward": 0.0, "latency": 0.0, "dc": 0.0, "penalty": 0.0, "energy": 0.0}
        done = False
        while not done:
            if global_step < hyper.warmup_steps:
                action = warmup_rng.uniform(-1.0, 1.0, env.action_dim)
            else:
                action = agent.sample_action(state)
            if action_transform is not None:
                action = action_transform(env.world, action)
            next_state, reward, done, info = env.step(action)
            buffer.push(state, action, reward.total, next_state, done)
            state = next_state
            global_step += 1
            sums["reward"] += reward.total
            sums["latency"] += reward.latency
            sums["dc"] += reward.dc
            sums["penalty"] += reward.penalty
            sums["energy"] += float(info["energy_per_uav"].sum())
            if global_step > hyper.warmup_steps and len(buffer) >= hyper.batch_size:
                for _ in range(hyper.updates_per_step):
                    batch = buffer.sample(hyper.batch_size)
                    agent.critic_update(batch)
                    agent.policy_update(batch)
                    agent.soft_update()
                    agent.update_count += 1
        record = EpisodeRecord(
            episode=episode,
            sum_reward=sums["reward"],
            latency=sums["latency"],
            dc=sums["dc"],
            penalty=sums["penalty"],
            energy_joules=sums["energy"],
        )
        records.append(record)
        if callback is not None:
            callback(record, agent)
        if checkpoint_dir and checkpoint_every and (episode + 1) % checkpoint_every == 0:
            Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
            agent.save(
                Path(checkpoint_dir) / f"checkpoint_ep{episode + 1:05d}.pt",
                extra={"episode": episode + 1, "seed": seed},
            )
    return agent, records
