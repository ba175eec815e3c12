"""Periodic torus geometry: site indexing, directions, neighbor tables.

Sites of {0,...,L-1}^d are enumerated in row-major (C) order, so site index
and coordinate tuple map to each other exactly as with numpy reshape/ravel.
The 2d unit steps are indexed 0..2d-1: index i is +e_i for i < d and
-e_{i-d} for i >= d.
"""

from __future__ import annotations

import numpy as np


class Torus:
    """Finite periodic lattice {0,...,L-1}^d with wrap-around neighbors."""

    def __init__(self, d: int, L: int):
        if d < 1:
            raise ValueError("dimension must be >= 1")
        if L < 2:
            raise ValueError("side length must be >= 2")
        self.d = int(d)
        self.L = int(L)
        self.n = self.L ** self.d
        self.shape = (self.L,) * self.d
        self.ndir = 2 * self.d

        # directions[k] is the step vector of direction index k
        eye = np.eye(self.d, dtype=np.int64)
        self.directions = np.vstack([eye, -eye])
        self.axis_of = np.concatenate([np.arange(self.d), np.arange(self.d)])
        self.sign_of = np.concatenate([np.ones(self.d, dtype=np.int64),
                                       -np.ones(self.d, dtype=np.int64)])

        # nbr[x, k] = site index of x + step(k), wrapping modulo L
        grid = np.arange(self.n, dtype=np.int64).reshape(self.shape)
        cols = []
        for i in range(self.d):
            cols.append(np.roll(grid, -1, axis=i).ravel())
        for i in range(self.d):
            cols.append(np.roll(grid, 1, axis=i).ravel())
        self.nbr = np.stack(cols, axis=1)

        # plaquette pairs (i, j), i < j, in lexicographic order
        self.pairs = [(i, j) for i in range(self.d) for j in range(i + 1, self.d)]
        self.npairs = len(self.pairs)

    def opposite(self, k: int) -> int:
        return (k + self.d) % self.ndir

    @property
    def opp(self) -> np.ndarray:
        """Vector of opposite-direction indices."""
        return np.concatenate([np.arange(self.d, 2 * self.d), np.arange(self.d)])

    def index(self, coords) -> int:
        return int(np.ravel_multi_index(np.asarray(coords) % self.L, self.shape))

    def coords(self, index: int) -> tuple:
        return tuple(int(c) for c in np.unravel_index(index, self.shape))

    def all_coords(self) -> np.ndarray:
        """(n, d) array of site coordinates in index order."""
        return np.stack(np.unravel_index(np.arange(self.n), self.shape), axis=1)

    def shift(self, values: np.ndarray, k: int) -> np.ndarray:
        """Translate a site-indexed array: result[x] = values[x + step(k)]."""
        return values[self.nbr[:, k]]

    def __eq__(self, other) -> bool:
        return isinstance(other, Torus) and self.d == other.d and self.L == other.L

    def __hash__(self):
        return hash((self.d, self.L))

    def __repr__(self) -> str:
        return f"Torus(d={self.d}, L={self.L})"
