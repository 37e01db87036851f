"""Flat input encodings for the branch network."""

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ShapeMismatch

FULL = "full"  # A, B|0, Q, R|0 each padded to n x n -> 4 n^2
CHAIN = "chain"  # single-input chain: A, B column, Q, scalar R -> 2 n^2 + n + 1
TRIG = "trig"  # trigonometric coefficient vector


@dataclass(frozen=True)
class EncodingDescriptor:
    kind: str
    n: int
    m: int
    r_base: int = 0

    @property
    def length(self):
        n, m = self.n, self.m
        if self.kind == FULL:
            return 4 * n * n
        if self.kind == CHAIN:
            return 2 * n * n + n + 1
        if self.kind == TRIG:
            return 2 * n * n + n * m + self.r_base * 2 * (2 * n * n + n * m)
        raise ValueError(f"unknown encoding kind {self.kind!r}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _pad(mat, n):
    out = np.zeros((n, n))
    out[: mat.shape[0], : mat.shape[1]] = mat
    return out


def encode_input(sys, desc):
    """Flatten a system into the branch-input vector described by ``desc``."""
    if sys.n != desc.n or (desc.kind != FULL and sys.m != desc.m):
        raise ShapeMismatch(f"system ({sys.n}, {sys.m}) vs descriptor ({desc.n}, {desc.m})")
    n = desc.n
    if desc.kind == TRIG:
        if sys.time_invariant:
            raise ShapeMismatch("trig encoding needs a trigonometric system")
        if sys.coeffs.r_base != desc.r_base:
            raise ShapeMismatch("harmonic count differs from descriptor")
        return sys.coeffs.to_vector()
    if not sys.time_invariant:
        raise ShapeMismatch(f"{desc.kind} encoding needs a time-invariant system")
    if desc.kind == FULL:
        if sys.m > n:
            raise ShapeMismatch("control dimension exceeds state dimension")
        parts = [sys.A, _pad(sys.B, n), sys.Q, _pad(sys.R, n)]
        return np.concatenate([p.reshape(-1) for p in parts])
    if desc.kind == CHAIN:
        if sys.m != 1:
            raise ShapeMismatch("chain encoding needs a single input")
        return np.concatenate([sys.A.reshape(-1), sys.B.reshape(-1),
                               sys.Q.reshape(-1), sys.R.reshape(-1)])
    raise ValueError(f"unknown encoding kind {desc.kind!r}")
