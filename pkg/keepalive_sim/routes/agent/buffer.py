from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    terminal: bool


class ReplayBuffer:
    """Bounded ring of transitions, the oldest is overwritten first"""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError(f"replay capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.memory: list[Optional[Transition]] = [None] * capacity
        self._cursor = 0
        self._size = 0

    def push(self, transition: Transition) -> None:
        self.memory[self._cursor] = transition
        self._cursor = (self._cursor + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch: int, rng: np.random.Generator) -> list[Transition]:
        # Uniform, without replacement within a batch
        size = min(batch, self._size)
        indices = rng.choice(self._size, size=size, replace=False)
        return [self.memory[int(i)] for i in indices]

    def oldest_first(self) -> list[Transition]:
        if self._size < self.capacity:
            return self.memory[: self._size]
        return self.memory[self._cursor :] + self.memory[: self._cursor]

    def __len__(self) -> int:
        return self._size
