"""Allocation accounting for training working memory.

Counts bytes of the arrays a training step materializes (batch buffers,
gathered embedding rows, gradients, touched optimizer state) plus any
persistent tables besides the embedding table and its optimizer state.
This is an estimate of the working set, not process RSS.
"""

from __future__ import annotations

import numpy as np


class SquareAllocationError(RuntimeError):
    pass


class MemoryAccountant:
    def __init__(self, node_count: int):
        self.node_count = int(node_count)
        self.persistent: dict[str, int] = {}
        self.peak_step_bytes = 0
        self.steps = 0

    def _check(self, a: np.ndarray, name: str | None = None) -> None:
        N = self.node_count
        if N > 1 and sum(1 for s in a.shape if s == N) >= 2:
            raise SquareAllocationError(
                f"array {name or ''} of shape {a.shape} is N x N in the node count N={N}")

    def register(self, name: str, *arrays: np.ndarray) -> None:
        """Record a persistent auxiliary table (counted once)."""
        for a in arrays:
            self._check(a, name)
        self.persistent[name] = sum(int(a.nbytes) for a in arrays)

    def observe(self, *arrays: np.ndarray) -> int:
        """Record the arrays live during one training step; returns their bytes."""
        total = 0
        for a in arrays:
            if a is None:
                continue
            self._check(a)
            total += int(a.nbytes)
        self.steps += 1
        if total > self.peak_step_bytes:
            self.peak_step_bytes = total
        return total

    @property
    def persistent_bytes(self) -> int:
        return sum(self.persistent.values())

    @property
    def peak_aux_bytes(self) -> int:
        return self.persistent_bytes + self.peak_step_bytes

    def summary(self) -> dict:
        return {
            "persistent_bytes": self.persistent_bytes,
            "peak_step_bytes": self.peak_step_bytes,
            "peak_aux_bytes": self.peak_aux_bytes,
            "steps": self.steps,
        }
