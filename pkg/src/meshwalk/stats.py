"""Mergeable mean/variance accumulators for ensembles of arrays."""

from __future__ import annotations

import numpy as np


class RunningMoments:
    """Elementwise mean and sum of squared deviations over a stream of batches.

    Batches are reduced with a two-pass formula and folded in with the
    pairwise (Chan et al.) update, so partial results computed on separate
    workers merge exactly.  Complex data keeps a complex mean and a real
    M2 = sum |x - mean|^2.
    """

    def __init__(self):
        self.n = 0
        self.mean = None
        self.m2 = None

    def __repr__(self):
        shape = None if self.mean is None else self.mean.shape
        return f"RunningMoments(n={self.n}, shape={shape})"

    @classmethod
    def from_batch(cls, batch: np.ndarray) -> "RunningMoments":
        out = cls()
        batch = np.asarray(batch)
        out.n = batch.shape[0]
        out.mean = batch.mean(axis=0)
        dev = batch - out.mean
        out.m2 = (dev.real**2 + dev.imag**2).sum(axis=0) if np.iscomplexobj(dev) else (dev**2).sum(axis=0)
        return out

    def push(self, x: np.ndarray) -> None:
        self.merge(RunningMoments.from_batch(np.asarray(x)[None]))

    def update(self, batch: np.ndarray) -> None:
        self.merge(RunningMoments.from_batch(batch))

    def merge(self, other: "RunningMoments") -> "RunningMoments":
        if other.n == 0:
            return self
        if self.n == 0:
            self.n, self.mean, self.m2 = other.n, other.mean.copy(), other.m2.copy()
            return self
        n = self.n + other.n
        delta = other.mean - self.mean
        self.mean = self.mean + delta * (other.n / n)
        d2 = delta.real**2 + delta.imag**2 if np.iscomplexobj(delta) else delta**2
        self.m2 = self.m2 + other.m2 + d2 * (self.n * other.n / n)
        self.n = n
        return self

    @property
    def variance(self) -> np.ndarray:
        if self.n < 2:
            return np.zeros_like(self.m2)
        return self.m2 / (self.n - 1)

    @property
    def stderr(self) -> np.ndarray:
        return np.sqrt(self.variance / max(self.n, 1))
