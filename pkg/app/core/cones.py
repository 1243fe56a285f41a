"""
Jordan-algebra primitives for products of nonnegative orthants and
second-order cones, plus Nesterov-Todd scaling.

Vectors are full length; entries belonging to free variables are ignored on
input and returned as zero.
"""

from dataclasses import dataclass
from typing import List, Sequence, Tuple
import math

import numpy as np


@dataclass(frozen=True)
class ConeLayout:
    n: int
    free_idx: np.ndarray
    nonneg_idx: np.ndarray
    soc_blocks: Tuple[Tuple[int, int], ...]  # (start, dim)

    @classmethod
    def from_blocks(cls, blocks: Sequence[Tuple[str, int]]) -> "ConeLayout":
        free: List[int] = []
        nonneg: List[int] = []
        soc: List[Tuple[int, int]] = []
        pos = 0
        for kind, dim in blocks:
            if kind == "free":
                free.extend(range(pos, pos + dim))
            elif kind == "nonneg":
                nonneg.extend(range(pos, pos + dim))
            elif kind == "soc":
                soc.append((pos, dim))
            else:
                raise ValueError(f"unsupported cone '{kind}' in solver layout")
            pos += dim
        return cls(pos, np.array(free, dtype=int), np.array(nonneg, dtype=int), tuple(soc))

    @property
    def degree(self) -> int:
        return self.nonneg_idx.size + len(self.soc_blocks)

    @property
    def free_mask(self) -> np.ndarray:
        mask = np.zeros(self.n, dtype=bool)
        mask[self.free_idx] = True
        return mask

    def identity(self) -> np.ndarray:
        e = np.zeros(self.n)
        e[self.nonneg_idx] = 1.0
        for start, _ in self.soc_blocks:
            e[start] = 1.0
        return e

    def jordan(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        out = np.zeros(self.n)
        i = self.nonneg_idx
        out[i] = u[i] * v[i]
        for start, dim in self.soc_blocks:
            a, b = u[start:start + dim], v[start:start + dim]
            out[start] = a @ b
            out[start + 1:start + dim] = a[0] * b[1:] + b[0] * a[1:]
        return out

    def inverse_product(self, lam: np.ndarray, r: np.ndarray) -> np.ndarray:
        """q such that lam o q = r"""
        out = np.zeros(self.n)
        i = self.nonneg_idx
        out[i] = r[i] / lam[i]
        for start, dim in self.soc_blocks:
            l0, l1 = lam[start], lam[start + 1:start + dim]
            r0, r1 = r[start], r[start + 1:start + dim]
            det = l0 * l0 - l1 @ l1
            q0 = (l0 * r0 - l1 @ r1) / det
            out[start] = q0
            out[start + 1:start + dim] = (r1 - q0 * l1) / l0
        return out

    def max_step(self, x: np.ndarray, d: np.ndarray) -> float:
        """Largest alpha >= 0 keeping x + alpha d in the cone (inf if unbounded)"""
        alpha = math.inf
        i = self.nonneg_idx
        neg = d[i] < 0
        if np.any(neg):
            alpha = min(alpha, float(np.min(-x[i][neg] / d[i][neg])))
        for start, dim in self.soc_blocks:
            alpha = min(alpha, _soc_max_step(x[start:start + dim], d[start:start + dim]))
        return alpha

    def is_interior(self, x: np.ndarray) -> bool:
        if np.any(x[self.nonneg_idx] <= 0):
            return False
        for start, dim in self.soc_blocks:
            v = x[start:start + dim]
            if v[0] <= 0 or v[0] * v[0] - v[1:] @ v[1:] <= 0:
                return False
        return True

    def scaling(self, x: np.ndarray, s: np.ndarray) -> "NTScaling":
        return NTScaling(self, x, s)


def _soc_max_step(x: np.ndarray, d: np.ndarray) -> float:
    a = d[0] * d[0] - d[1:] @ d[1:]
    b = x[0] * d[0] - x[1:] @ d[1:]
    c = x[0] * x[0] - x[1:] @ x[1:]
    alpha = math.inf
    if d[0] < 0:
        alpha = -x[0] / d[0]
    # roots of a t^2 + 2 b t + c, c > 0 at an interior point
    if abs(a) <= 1e-300:
        if b < 0:
            alpha = min(alpha, -c / (2.0 * b))
        return alpha
    disc = b * b - a * c
    if disc < 0:
        return alpha
    q = -(b + math.copysign(math.sqrt(disc), b))
    for root in (q / a, c / q if q != 0 else math.inf):
        if root > 0:
            alpha = min(alpha, root)
    return alpha


class NTScaling:
    """W with W x = W^-1 s = lam on every cone block"""

    def __init__(self, layout: ConeLayout, x: np.ndarray, s: np.ndarray):
        self.layout = layout
        i = layout.nonneg_idx
        self.w_diag = np.sqrt(s[i] / x[i])
        self.blocks = []
        for start, dim in layout.soc_blocks:
            self.blocks.append(_soc_scaling(x[start:start + dim], s[start:start + dim]))
        self.lam = self.apply(x)

    def apply(self, v: np.ndarray) -> np.ndarray:
        out = np.zeros(self.layout.n)
        i = self.layout.nonneg_idx
        out[i] = self.w_diag * v[i]
        for (start, dim), (W, _) in zip(self.layout.soc_blocks, self.blocks):
            out[start:start + dim] = W @ v[start:start + dim]
        return out

    def apply_inv(self, v: np.ndarray) -> np.ndarray:
        out = np.zeros(self.layout.n)
        i = self.layout.nonneg_idx
        out[i] = v[i] / self.w_diag
        for (start, dim), (_, W_inv) in zip(self.layout.soc_blocks, self.blocks):
            out[start:start + dim] = W_inv @ v[start:start + dim]
        return out

    def hessian(self) -> np.ndarray:
        """Dense W^2, zero on free variables"""
        H = np.zeros((self.layout.n, self.layout.n))
        i = self.layout.nonneg_idx
        H[i, i] = self.w_diag ** 2
        for (start, dim), (W, _) in zip(self.layout.soc_blocks, self.blocks):
            H[start:start + dim, start:start + dim] = W @ W
        return H


def _soc_scaling(x: np.ndarray, s: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    dim = x.size
    J = np.eye(dim)
    J[1:, 1:] *= -1.0
    x_norm = math.sqrt(x @ J @ x)
    s_norm = math.sqrt(s @ J @ s)
    beta = math.sqrt(s_norm / x_norm)
    xb, sb = x / x_norm, s / s_norm
    gamma = math.sqrt((1.0 + xb @ sb) / 2.0)
    wb = (sb + J @ xb) / (2.0 * gamma)
    e = np.zeros(dim)
    e[0] = 1.0
    v = (wb + e) / math.sqrt(2.0 * (wb[0] + 1.0))
    W = beta * (2.0 * np.outer(v, v) - J)
    Jv = J @ v
    W_inv = (2.0 * np.outer(Jv, Jv) - J) / beta
    return W, W_inv
