"""The ordered product (W^1, ..., W^L, theta) that every optimizer walks over."""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError


@dataclass
class ParamTree:
    """Hidden weight matrices plus one flat vector holding everything else.

    ``base`` may be empty. Arithmetic operators return new trees.
    """

    matrices: list = field(default_factory=list)
    base: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        mats = []
        for M in self.matrices:
            M = np.array(M, dtype=np.float64)
            if M.ndim != 2:
                raise DimensionError(f"matrix slot must be 2-D, got shape {M.shape}")
            mats.append(M)
        self.matrices = mats
        self.base = np.array(self.base, dtype=np.float64).reshape(-1)

    @classmethod
    def from_slots(cls, slots):
        *mats, base = slots
        return cls(list(mats), base)

    def slots(self):
        return [*self.matrices, self.base]

    @property
    def n_slots(self):
        return len(self.matrices) + 1

    @property
    def shapes(self):
        return [s.shape for s in self.slots()]

    @property
    def size(self):
        return sum(s.size for s in self.slots())

    def _check(self, other):
        if self.shapes != other.shapes:
            raise DimensionError(f"tree shapes differ: {self.shapes} vs {other.shapes}")

    def copy(self):
        return ParamTree([M.copy() for M in self.matrices], self.base.copy())

    def zeros_like(self):
        return ParamTree([np.zeros_like(M) for M in self.matrices], np.zeros_like(self.base))

    def map(self, fn):
        return ParamTree.from_slots([fn(s) for s in self.slots()])

    def zip_map(self, other, fn):
        self._check(other)
        return ParamTree.from_slots([fn(a, b) for a, b in zip(self.slots(), other.slots())])

    def __add__(self, other):
        return self.zip_map(other, np.add)

    def __sub__(self, other):
        return self.zip_map(other, np.subtract)

    def __mul__(self, c):
        return self.map(lambda s: s * float(c))

    __rmul__ = __mul__

    def __neg__(self):
        return self.map(np.negative)

    def add_(self, other, scale=1.0):
        """In-place ``self += scale * other``."""
        self._check(other)
        for a, b in zip(self.slots(), other.slots()):
            a += scale * b
        return self

    def inner(self, other):
        self._check(other)
        return float(sum(np.dot(a.ravel(), b.ravel()) for a, b in zip(self.slots(), other.slots())))

    def flat(self):
        return np.concatenate([s.ravel() for s in self.slots()])

    def unflatten(self, vec):
        """A tree of this shape filled from a flat vector."""
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.size:
            raise DimensionError(f"expected {self.size} entries, got {vec.size}")
        out, k = [], 0
        for s in self.slots():
            out.append(vec[k:k + s.size].reshape(s.shape))
            k += s.size
        return ParamTree.from_slots(out)

    def is_finite(self):
        return all(np.all(np.isfinite(s)) for s in self.slots())

    def any_nonzero(self):
        return any(np.any(s) for s in self.slots())
