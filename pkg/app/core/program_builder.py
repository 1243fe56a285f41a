from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple
import logging

import numpy as np
from scipy import sparse

from app.core.conic import ConeBlock, ConeKind, StandardConicProgram

logger = logging.getLogger(__name__)

# Column index standing for the constant 1 in affine expressions.
ONE = -1


@dataclass
class ConicProgramBuilder:
    """
    Incremental assembly of a StandardConicProgram.

    Variables are declared in cone blocks and addressed by integer column.
    Equalities take (columns, coefficients, rhs); a column equal to ONE moves
    its coefficient to the right-hand side.
    """

    _blocks: List[ConeBlock] = field(default_factory=list)
    _names: Dict[str, np.ndarray] = field(default_factory=dict)
    _rows: List[int] = field(default_factory=list)
    _cols: List[int] = field(default_factory=list)
    _vals: List[float] = field(default_factory=list)
    _rhs: List[float] = field(default_factory=list)
    _cost: Dict[int, float] = field(default_factory=dict)
    offset: float = 0.0

    @property
    def n_vars(self) -> int:
        return sum(b.dim for b in self._blocks)

    @property
    def n_rows(self) -> int:
        return len(self._rhs)

    def add_block(self, name: str, kind: ConeKind, dim: int) -> np.ndarray:
        start = self.n_vars
        self._blocks.append(ConeBlock(kind, dim))
        idx = np.arange(start, start + dim)
        self._names[name] = idx
        return idx

    def add_free(self, name: str, dim: int) -> np.ndarray:
        return self.add_block(name, ConeKind.FREE, dim) if dim else np.zeros(0, dtype=int)

    def add_nonneg(self, name: str, dim: int) -> np.ndarray:
        return self.add_block(name, ConeKind.NONNEG, dim) if dim else np.zeros(0, dtype=int)

    def variables(self, name: str) -> np.ndarray:
        return self._names[name]

    def register(self, name: str, cols: Sequence[int]) -> None:
        """Name a set of columns spread over several blocks"""
        self._names[name] = np.asarray(cols, dtype=int)

    def add_equality(self, cols: Sequence[int], coefs: Sequence[float], rhs: float) -> int:
        row = self.n_rows
        constant = 0.0
        for col, coef in zip(cols, coefs):
            if coef == 0.0:
                continue
            if col == ONE:
                constant += coef
                continue
            self._rows.append(row)
            self._cols.append(int(col))
            self._vals.append(float(coef))
        self._rhs.append(float(rhs) - constant)
        return row

    def add_inequality(self, cols: Sequence[int], coefs: Sequence[float], rhs: float, sense: str, name: str) -> int:
        """sum coef * x <= rhs (sense 'le') or >= rhs (sense 'ge') through a nonneg slack"""
        slack = self.add_nonneg(name, 1)[0]
        sign = 1.0 if sense == "le" else -1.0
        return self.add_equality(list(cols) + [slack], list(coefs) + [sign], rhs)

    def add_cost(self, col: int, coef: float) -> None:
        if col == ONE:
            self.offset += coef
        else:
            self._cost[int(col)] = self._cost.get(int(col), 0.0) + float(coef)

    def build(self) -> Tuple[StandardConicProgram, Dict[str, np.ndarray]]:
        n = self.n_vars
        c = np.zeros(n)
        for col, coef in self._cost.items():
            c[col] = coef
        A = sparse.csr_matrix((self._vals, (self._rows, self._cols)), shape=(self.n_rows, n))
        program = StandardConicProgram(
            c=c, A=A, b=np.asarray(self._rhs, dtype=float), cones=tuple(self._blocks), offset=self.offset,
        )
        logger.debug(f"Built conic program: {n} variables, {self.n_rows} equalities, {len(self._blocks)} cone blocks")
        return program, dict(self._names)
