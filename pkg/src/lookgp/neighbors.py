"""Exact k-nearest-neighbor search in the lengthscale-scaled metric.

Two backends return identical ordered results: a chunked brute-force scan and
a k-d tree (``scipy.spatial.cKDTree``) whose candidates are re-ranked with the
same distance arithmetic as the scan. Ties are broken by the smaller index.
"""

from __future__ import annotations

from enum import Enum

import numpy as np
from scipy.spatial import cKDTree

from .kernels import Hyperparams

_CHUNK_ELEMS = 4_000_000


class Backend(str, Enum):
    BRUTE = "brute"
    KDTREE = "kdtree"
    AUTO = "auto"


def _sqdist_rows(Uq, U):
    out = np.zeros((Uq.shape[0], U.shape[0]))
    for i in range(U.shape[1]):
        diff = Uq[:, None, i] - U[None, :, i]
        out += diff * diff
    return out


def _rank(d2, idx, k):
    """Order candidate columns by (distance, index) and keep ``k`` per row."""
    order = np.lexsort((idx, d2), axis=-1)
    rows = np.arange(d2.shape[0])[:, None]
    return idx[rows, order[:, :k]], d2[rows, order[:, :k]]


def _fill(out, rows, idx, t, mask):
    """``out[rows[j], :t[j]] = idx[j, :t[j]]`` for every ``j`` in ``mask``."""
    for tv in np.unique(t[mask]):
        sel = np.nonzero(mask & (t == tv))[0]
        out[rows[sel], :tv] = idx[sel, :tv]


class NeighborIndex:
    """Immutable neighbor index over training inputs.

    Parameters
    ----------
    X : array (N, D)
    log_lengthscales : array (D,)
        Lengthscales defining the metric, snapshotted at build time.
    backend : {"brute", "kdtree", "auto"}
    """

    def __init__(self, X, log_lengthscales, backend: Backend | str = Backend.AUTO):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[0] == 0:
            raise ValueError("cannot build a neighbor index over zero points")
        self.built_with = np.array(log_lengthscales, dtype=float).ravel()
        if self.built_with.shape[0] != X.shape[1]:
            raise ValueError("dimension mismatch between X and lengthscales")
        self.scaled_points = X / np.exp(self.built_with)
        self.scaled_points.setflags(write=False)
        backend = Backend(backend)
        if backend is Backend.AUTO:
            backend = Backend.BRUTE if X.shape[0] <= 4096 else Backend.KDTREE
        self.backend = backend
        self._tree = cKDTree(self.scaled_points) if backend is Backend.KDTREE else None
        self._self_tables: dict[int, np.ndarray] = {}

    @property
    def n_points(self) -> int:
        return self.scaled_points.shape[0]

    @property
    def dim(self) -> int:
        return self.scaled_points.shape[1]

    def query(self, x, k: int, exclude: int | None = None) -> np.ndarray:
        """Indices of the ``k`` nearest indexed points to ``x`` in ascending distance."""
        x = np.asarray(x, dtype=float).ravel()
        if x.shape[0] != self.dim:
            raise ValueError(f"dimension mismatch: query has D={x.shape[0]}, index D={self.dim}")
        ex = None if exclude is None else np.array([exclude])
        nb = self.query_batch(x[None], k, ex)[0]
        return nb[nb >= 0]

    def query_batch(self, Xq, k: int, exclude=None) -> np.ndarray:
        """Neighbors for many queries.

        Parameters
        ----------
        Xq : array (B, D)
            Query points in original (unscaled) coordinates.
        k : int
        exclude : array (B,) of int, optional
            One index per row to leave out; ``-1`` excludes nothing.

        Returns
        -------
        array (B, k) of int
            Padded with ``-1`` when fewer than ``k`` points are eligible.
        """
        if k < 1:
            raise ValueError("k must be at least 1")
        Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
        if Xq.shape[1] != self.dim:
            raise ValueError(f"dimension mismatch: queries have D={Xq.shape[1]}, index D={self.dim}")
        Uq = Xq / np.exp(self.built_with)
        return self._query_scaled(Uq, k, exclude)

    def self_neighbors(self, k: int) -> np.ndarray:
        """The ``k`` nearest other training points of every training point, cached per ``k``."""
        if k not in self._self_tables:
            N = self.n_points
            table = self._query_scaled(self.scaled_points, k, np.arange(N))
            table.setflags(write=False)
            self._self_tables[k] = table
        return self._self_tables[k]

    def _query_scaled(self, Uq, k, exclude):
        B, N = Uq.shape[0], self.n_points
        ex = np.full(B, -1, dtype=np.int64) if exclude is None else np.asarray(exclude, dtype=np.int64).ravel()
        if ex.shape[0] != B:
            raise ValueError("exclude must have one entry per query")
        out = np.full((B, k), -1, dtype=np.int64)
        kk = min(k, N)
        # per-row number of results: exclusion removes one eligible point
        t_row = np.minimum(kk, N - (ex >= 0))
        if self.backend is Backend.KDTREE and kk + 2 < N:
            bad = self._query_tree(Uq, ex, t_row, kk + 2, out)
        else:
            bad = np.arange(B)
        if len(bad):
            self._query_brute(Uq, ex, t_row, out, bad)
        return out

    def _query_brute(self, Uq, ex, t_row, out, rows):
        U = self.scaled_points
        N = U.shape[0]
        m = min(int(t_row.max(initial=0)) + 1, N)
        step = max(1, _CHUNK_ELEMS // max(1, N * U.shape[1]))
        for s in range(0, len(rows), step):
            r = rows[s : s + step]
            d2 = _sqdist_rows(Uq[r], U)
            has_ex = ex[r] >= 0
            d2[np.nonzero(has_ex)[0], ex[r][has_ex]] = np.inf
            if m < N:
                cand = np.argpartition(d2, m - 1, axis=1)[:, :m]
            else:
                cand = np.broadcast_to(np.arange(N), d2.shape).copy()
            idx, dd = _rank(np.take_along_axis(d2, cand, axis=1), cand, m)
            t = t_row[r]
            boundary = dd[np.arange(len(r)), np.maximum(t - 1, 0)]
            if m < N:
                # ties at the cut-off need the whole row ranked
                tied = np.count_nonzero(d2 <= boundary[:, None], axis=1) > t
            else:
                tied = np.zeros(len(r), dtype=bool)
            _fill(out, r, idx, t, ~tied & (t > 0))
            for j in np.nonzero(tied & (t > 0))[0]:
                fidx, _ = _rank(d2[j][None], np.arange(N)[None], t[j])
                out[r[j], : t[j]] = fidx[0]

    def _query_tree(self, Uq, ex, t_row, m, out):
        """Fill rows whose k-d tree candidates provably contain the exact answer.

        Returns the rows that must be re-done by brute force.
        """
        B = Uq.shape[0]
        _, cand = self._tree.query(Uq, k=m)
        cand = np.asarray(cand, dtype=np.int64).reshape(B, m)
        U = self.scaled_points
        cd2 = np.zeros(cand.shape)
        for i in range(U.shape[1]):
            diff = Uq[:, None, i] - U[cand, i]
            cd2 += diff * diff
        cd2[cand == ex[:, None]] = np.inf
        idx, dd = _rank(cd2, cand, m)
        rows = np.arange(B)
        boundary = dd[rows, np.maximum(t_row - 1, 0)]
        finite = np.where(np.isfinite(dd), dd, -np.inf)
        spare = finite.max(axis=1)
        # every point outside the candidate set is at least as far as the farthest candidate
        ok = (t_row > 0) & (spare > boundary * (1.0 + 1e-9) + 1e-300)
        _fill(out, rows, idx, t_row, ok)
        return np.nonzero(~ok)[0]


def build_index(X, hp: Hyperparams | np.ndarray, backend: Backend | str = Backend.AUTO) -> NeighborIndex:
    """Build a :class:`NeighborIndex` using the lengthscales in ``hp``."""
    log_ls = hp.log_lengthscales if isinstance(hp, Hyperparams) else np.asarray(hp, dtype=float)
    return NeighborIndex(X, log_ls, backend)
