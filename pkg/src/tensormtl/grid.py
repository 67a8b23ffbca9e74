"""Task-grid indexing: flat task ids versus per-mode multi-indices."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidIndexError


@dataclass(frozen=True)
class TaskGrid:
    """Shape of the task grid.

    Tasks are addressed either by a 0-based flat id ``t`` in ``[0, total)``
    or by a tuple of 1-based per-mode indices ``(t_1, ..., t_N)``.  Flat ids
    use the first-index-fastest layout::

        t = (t_1 - 1) + (t_2 - 1) T_1 + ... + (t_N - 1) T_1 ... T_{N-1}

    Dataset files and model files store task ids in this convention, so it
    must not change.
    """

    shape: tuple[int, ...]

    def __post_init__(self):
        shape = tuple(int(s) for s in self.shape)
        if len(shape) < 1:
            raise ValueError("grid needs at least one mode")
        if any(s < 1 for s in shape):
            raise ValueError(f"mode sizes must be >= 1, got {shape}")
        object.__setattr__(self, "shape", shape)

    @property
    def nmodes(self) -> int:
        return len(self.shape)

    @property
    def total(self) -> int:
        return math.prod(self.shape)

    def linearize(self, multi) -> int:
        """Flat id of the 1-based multi-index ``multi``."""
        if len(multi) != self.nmodes:
            raise InvalidIndexError(
                f"expected {self.nmodes} mode indices, got {len(multi)}"
            )
        t = 0
        stride = 1
        for n, (idx, size) in enumerate(zip(multi, self.shape)):
            idx = int(idx)
            if not 1 <= idx <= size:
                raise InvalidIndexError(
                    f"mode {n + 1} index {idx} outside [1, {size}]"
                )
            t += (idx - 1) * stride
            stride *= size
        return t

    def delinearize(self, t: int) -> tuple[int, ...]:
        """1-based multi-index of flat id ``t``."""
        t = int(t)
        if not 0 <= t < self.total:
            raise InvalidIndexError(
                f"flat task id {t} outside [0, {self.total})"
            )
        out = []
        for size in self.shape:
            out.append(t % size + 1)
            t //= size
        return tuple(out)

    def multi_indices(self) -> np.ndarray:
        """(total, nmodes) array of 1-based multi-indices, one row per task."""
        idx = np.unravel_index(np.arange(self.total), self.shape, order="F")
        return np.stack(idx, axis=1) + 1

    def mode_slice_tasks(self, mode: int, slice_index: int) -> np.ndarray:
        """Flat ids of tasks whose ``mode``-th index equals ``slice_index``.

        Both arguments are 1-based.  The result is sorted ascending.
        """
        if not 1 <= mode <= self.nmodes:
            raise InvalidIndexError(f"mode {mode} outside [1, {self.nmodes}]")
        size = self.shape[mode - 1]
        if not 1 <= slice_index <= size:
            raise InvalidIndexError(
                f"slice {slice_index} outside [1, {size}] in mode {mode}"
            )
        multi = self.multi_indices()
        return np.flatnonzero(multi[:, mode - 1] == slice_index)
