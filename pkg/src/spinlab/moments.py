"""Mergeable sample moments (count, mean, centred sum of squares).

Chunks are summarized independently and merged pairwise in a fixed order
(Chan et al.'s update), which keeps variances accurate when the spread is
tiny compared with the mean.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Moments:
    count: int
    mean: np.ndarray
    m2: np.ndarray

    @classmethod
    def of(cls, values):
        """Moments over the first axis of ``values``."""
        v = np.asarray(values, dtype=float)
        mean = v.mean(axis=0)
        return cls(len(v), mean, ((v - mean) ** 2).sum(axis=0))

    def merge(self, other):
        n = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + delta * (other.count / n)
        m2 = self.m2 + other.m2 + delta**2 * (self.count * other.count / n)
        return Moments(n, mean, m2)

    @staticmethod
    def merge_all(parts):
        out = parts[0]
        for p in parts[1:]:
            out = out.merge(p)
        return out

    @property
    def variance(self):
        return self.m2 / max(self.count - 1, 1)

    @property
    def standard_error(self):
        return np.sqrt(self.variance / self.count)
