"""Transition storage: FIFO ring buffers and sim/real batch mixing."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import StructuralError, TrainingError
from .scenario import Transition


@dataclass
class Batch:
    state: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    next_state: np.ndarray
    done: np.ndarray

    def __len__(self) -> int:
        return self.state.shape[0]

    @staticmethod
    def concat(parts) -> "Batch":
        parts = [p for p in parts if len(p)]
        if not parts:
            raise TrainingError("cannot build an empty batch")
        return Batch(
            state=np.concatenate([p.state for p in parts]),
            action=np.concatenate([p.action for p in parts]),
            reward=np.concatenate([p.reward for p in parts]),
            next_state=np.concatenate([p.next_state for p in parts]),
            done=np.concatenate([p.done for p in parts]),
        )


class ReplayBuffer:
    """Fixed-capacity FIFO store over flat transition arrays."""

    def __init__(self, capacity: int, state_dim: int, action_dim: int):
        if capacity < 1:
            raise StructuralError("capacity must be positive")
        self.capacity = capacity
        self.state = np.zeros((capacity, state_dim))
        self.action = np.zeros((capacity, action_dim))
        self.reward = np.zeros(capacity)
        self.next_state = np.zeros((capacity, state_dim))
        self.done = np.zeros(capacity)
        self.count = 0  # total pushes ever

    def __len__(self) -> int:
        return min(self.count, self.capacity)

    def push(self, state, action, reward, next_state, done) -> None:
        state = np.asarray(state, dtype=float)
        action = np.asarray(action, dtype=float)
        if state.shape != (self.state.shape[1],) or action.shape != (self.action.shape[1],):
            raise StructuralError(
                f"transition dims {state.shape}/{action.shape} do not match buffer"
            )
        i = self.count % self.capacity
        self.state[i] = state
        self.action[i] = action
        self.reward[i] = reward
        self.next_state[i] = next_state
        self.done[i] = float(done)
        self.count += 1

    def push_transition(self, tr: Transition) -> None:
        self.push(tr.state, tr.action, tr.reward, tr.next_state, tr.done)

    def extend(self, transitions) -> None:
        for tr in transitions:
            self.push_transition(tr)

    def sample(self, n: int, rng: np.random.Generator) -> Batch:
        """Uniform draw without replacement within the batch."""
        size = len(self)
        if n > size:
            raise TrainingError(f"requested {n} samples from buffer of {size}")
        idx = rng.choice(size, size=n, replace=False)
        return Batch(
            state=self.state[idx].copy(),
            action=self.action[idx].copy(),
            reward=self.reward[idx].copy(),
            next_state=self.next_state[idx].copy(),
            done=self.done[idx].copy(),
        )

    def state_dict(self) -> dict:
        size = len(self)
        return {
            "state": self.state[:size].copy(),
            "action": self.action[:size].copy(),
            "reward": self.reward[:size].copy(),
            "next_state": self.next_state[:size].copy(),
            "done": self.done[:size].copy(),
        }

    @classmethod
    def from_state(cls, arrays: dict, capacity: int) -> "ReplayBuffer":
        n, ds = arrays["state"].shape
        da = arrays["action"].shape[1]
        buf = cls(capacity, ds, da)
        for i in range(n):
            buf.push(
                arrays["state"][i],
                arrays["action"][i],
                arrays["reward"][i],
                arrays["next_state"][i],
                arrays["done"][i],
            )
        return buf


def sim_batch_size(n: int, ratio: float) -> int:
    """Simulation share of a mixed batch of n for sim:real ratio r."""
    if ratio < 0:
        raise TrainingError(f"negative sim/real ratio {ratio}")
    if math.isinf(ratio):
        return n
    return int(round(n * ratio / (1.0 + ratio)))


def mixed_batch(
    sim: ReplayBuffer | None,
    real: ReplayBuffer | None,
    ratio: float,
    n: int,
    rng: np.random.Generator,
):
    """Draw (sim_part, real_part) with counts set by the sim:real ratio.

    ratio=0 reads only the real buffer, ratio=inf only the simulation
    buffer; either part may then be empty (None).
    """
    n_sim = sim_batch_size(n, ratio)
    n_real = n - n_sim
    sim_part = None
    real_part = None
    if n_sim > 0:
        if sim is None or len(sim) == 0:
            raise TrainingError("simulation buffer required but empty")
        sim_part = sim.sample(n_sim, rng)
    if n_real > 0:
        if real is None or len(real) == 0:
            raise TrainingError("offline data buffer required but empty")
        real_part = real.sample(n_real, rng)
    return sim_part, real_part
