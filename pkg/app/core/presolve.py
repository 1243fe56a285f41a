"""
Structural presolve for standard-form conic programs.

Works on dense arrays and a list of (kind, dim) cone blocks. Rotated cones
are mapped onto second-order cones by the involution
T = [[1/sqrt2, 1/sqrt2], [1/sqrt2, -1/sqrt2]] (+) I, so the reduced program only
holds free, nonneg and soc blocks. Reductions, in order:

  1. zero rows (dropped, or an infeasibility certificate when b_i != 0)
  2. free singleton rows (variable fixed and substituted)
  3. empty free columns (fixed at zero, or an unboundedness ray when c_j != 0)
  4. linearly dependent rows (dropped, or a certificate when inconsistent)
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple
import logging
import math

import numpy as np
from scipy.linalg import lstsq, qr

logger = logging.getLogger(__name__)

ZERO_TOL = 1e-14
RANK_TOL = 1e-10
CONSISTENCY_TOL = 1e-9

_SQRT_HALF = 1.0 / math.sqrt(2.0)


def rotate_blocks(blocks: Sequence[Tuple[str, int]]) -> Tuple[np.ndarray, List[Tuple[str, int]]]:
    """Indices of the rotated-cone head pairs and the block list with rsoc -> soc"""
    heads = []
    out = []
    pos = 0
    for kind, dim in blocks:
        if kind == "rsoc":
            heads.append(pos)
            out.append(("soc", dim))
        else:
            out.append((kind, dim))
        pos += dim
    return np.array(heads, dtype=int), out


def apply_rotation(v: np.ndarray, heads: np.ndarray, axis: int = 0) -> np.ndarray:
    """Multiply by T along `axis` (T is its own inverse)"""
    if heads.size == 0:
        return v
    out = np.array(v, dtype=float, copy=True)
    a = np.take(v, heads, axis=axis)
    b = np.take(v, heads + 1, axis=axis)
    idx_a = [slice(None)] * out.ndim
    idx_b = [slice(None)] * out.ndim
    idx_a[axis] = heads
    idx_b[axis] = heads + 1
    out[tuple(idx_a)] = _SQRT_HALF * (a + b)
    out[tuple(idx_b)] = _SQRT_HALF * (a - b)
    return out


@dataclass
class PresolveResult:
    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    blocks: List[Tuple[str, int]]
    status: Optional[str] = None  # "infeasible" | "unbounded" when decided here
    certificate_y: Optional[np.ndarray] = None
    certificate_x: Optional[np.ndarray] = None

    # bookkeeping in the rotated space
    n_orig: int = 0
    m_orig: int = 0
    heads: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    A_rot: Optional[np.ndarray] = None
    c_rot: Optional[np.ndarray] = None
    rows_kept: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    cols_kept: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    fixed: dict = field(default_factory=dict)  # col -> value
    singletons: List[Tuple[int, int, float]] = field(default_factory=list)  # (row, col, a_ij)

    @property
    def removed_rows(self) -> int:
        return self.m_orig - self.rows_kept.size

    @property
    def removed_cols(self) -> int:
        return self.n_orig - self.cols_kept.size

    def postsolve(self, x_r: np.ndarray, y_r: np.ndarray, s_r: np.ndarray,
                  homogeneous: bool = False) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Map a reduced primal-dual triple back to the original variables.
        homogeneous=True treats b and c as zero (used for certificates).
        """
        x = np.zeros(self.n_orig)
        x[self.cols_kept] = x_r
        if not homogeneous:
            for j, value in self.fixed.items():
                x[j] = value
        y = np.zeros(self.m_orig)
        y[self.rows_kept] = y_r
        for i, j, a_ij in reversed(self.singletons):
            c_j = 0.0 if homogeneous else self.c_rot[j]
            y[i] = (c_j - self.A_rot[:, j] @ y) / a_ij
        s = np.zeros(self.n_orig)
        s[self.cols_kept] = s_r
        return apply_rotation(x, self.heads), y, apply_rotation(s, self.heads)


def _free_mask(blocks: Sequence[Tuple[str, int]], n: int) -> np.ndarray:
    mask = np.zeros(n, dtype=bool)
    pos = 0
    for kind, dim in blocks:
        if kind == "free":
            mask[pos:pos + dim] = True
        pos += dim
    return mask


def _reduced_blocks(blocks: Sequence[Tuple[str, int]], keep: np.ndarray) -> List[Tuple[str, int]]:
    out = []
    pos = 0
    for kind, dim in blocks:
        kept = int(keep[pos:pos + dim].sum())
        if kind == "free" or kind == "nonneg":
            if kept:
                out.append((kind, kept))
        elif kept:
            out.append((kind, dim))  # cone columns are never removed
        pos += dim
    return out


def presolve(c: np.ndarray, A: np.ndarray, b: np.ndarray, blocks: Sequence[Tuple[str, int]]) -> PresolveResult:
    m, n = A.shape
    heads, rot_blocks = rotate_blocks(blocks)
    A_rot = apply_rotation(A, heads, axis=1)
    c_rot = apply_rotation(c, heads)
    b_work = np.array(b, dtype=float, copy=True)
    free = _free_mask(rot_blocks, n)

    res = PresolveResult(c=c_rot, A=A_rot, b=b_work, blocks=rot_blocks, n_orig=n, m_orig=m,
                         heads=heads, A_rot=A_rot, c_rot=c_rot)

    row_alive = np.ones(m, dtype=bool)
    col_alive = np.ones(n, dtype=bool)
    b_scale = 1.0 + (np.max(np.abs(b)) if m else 0.0)

    def nonzero(i: int) -> np.ndarray:
        return np.flatnonzero((np.abs(A_rot[i]) > ZERO_TOL) & col_alive)

    def certify_rows(y_kept: np.ndarray, rows: np.ndarray) -> None:
        res.status = "infeasible"
        res.rows_kept = rows
        res.cols_kept = np.flatnonzero(col_alive)
        _, y, _ = res.postsolve(np.zeros(res.cols_kept.size), y_kept, np.zeros(res.cols_kept.size), homogeneous=True)
        scale = float(b @ y)
        res.certificate_y = y / scale if scale > 0 else y

    changed = True
    while changed:
        changed = False
        for i in np.flatnonzero(row_alive):
            cols = nonzero(i)
            if cols.size == 0:
                if abs(b_work[i]) > CONSISTENCY_TOL * b_scale:
                    logger.debug(f"presolve: row {i} is empty with rhs {b_work[i]:.3e}")
                    rows = np.array([i])
                    certify_rows(np.array([math.copysign(1.0, b_work[i])]), rows)
                    return res
                row_alive[i] = False
                changed = True
            elif cols.size == 1 and free[cols[0]]:
                j = int(cols[0])
                a_ij = A_rot[i, j]
                value = b_work[i] / a_ij
                b_work -= A_rot[:, j] * value
                b_work[i] = 0.0
                res.fixed[j] = value
                res.singletons.append((int(i), j, float(a_ij)))
                row_alive[i] = False
                col_alive[j] = False
                changed = True

    for j in np.flatnonzero(col_alive & free):
        if np.all(np.abs(A_rot[row_alive, j]) <= ZERO_TOL):
            if abs(c_rot[j]) > ZERO_TOL:
                res.status = "unbounded"
                ray = np.zeros(n)
                ray[j] = -math.copysign(1.0, c_rot[j]) / abs(c_rot[j])
                res.certificate_x = apply_rotation(ray, heads)
                res.rows_kept = np.flatnonzero(row_alive)
                res.cols_kept = np.flatnonzero(col_alive)
                return res
            res.fixed[int(j)] = 0.0
            col_alive[j] = False

    rows = np.flatnonzero(row_alive)
    cols = np.flatnonzero(col_alive)
    A_red = A_rot[np.ix_(rows, cols)]
    b_red = b_work[rows]

    if rows.size > 1 and cols.size:
        _, R, piv = qr(A_red.T, mode="economic", pivoting=True)
        diag = np.abs(np.diag(R))
        rank = int(np.sum(diag > RANK_TOL * max(diag[0], 1.0))) if diag.size else 0
        if rank < rows.size:
            keep = np.sort(piv[:rank])
            drop = np.sort(piv[rank:])
            Z = lstsq(A_red[keep].T, A_red[drop].T)[0] if rank else np.zeros((0, drop.size))
            mismatch = b_red[drop] - Z.T @ b_red[keep]
            worst = int(np.argmax(np.abs(mismatch))) if mismatch.size else 0
            if mismatch.size and abs(mismatch[worst]) > CONSISTENCY_TOL * b_scale:
                logger.debug(f"presolve: dependent row {rows[drop[worst]]} is inconsistent")
                y_local = np.zeros(rows.size)
                y_local[drop[worst]] = 1.0
                y_local[keep] = -Z[:, worst]
                y_local *= math.copysign(1.0, mismatch[worst])
                certify_rows(y_local, rows)
                return res
            rows = rows[keep]
            A_red = A_red[keep]
            b_red = b_red[keep]

    res.rows_kept = rows
    res.cols_kept = cols
    res.A = A_red
    res.b = b_red
    res.c = c_rot[cols]
    res.blocks = _reduced_blocks(rot_blocks, col_alive)
    if res.removed_rows or res.removed_cols:
        logger.debug(f"presolve: removed {res.removed_rows} rows and {res.removed_cols} columns")
    return res
