"""
Standard-form conic programs and a homogeneous self-dual interior-point solver.

    minimize    c'x + offset
    subject to  A x = b,  x in K = K_1 x ... x K_p

Cone blocks are contiguous slices of x, in declaration order:
  free(d)     no restriction
  nonneg(d)   x >= 0
  soc(d)      x_0 >= ||x_1:||, d >= 2
  rsoc(d)     2 x_0 x_1 >= ||x_2:||^2, x_0, x_1 >= 0, d >= 3

Dump format (plain text, one record per line, '#' starts a comment):
    dims <m> <n>
    cones <kind>:<dim> [<kind>:<dim> ...]
    offset <value>
    c <j> <value>
    b <i> <value>
    A <i> <j> <value>
Indices are zero based, values are written with repr() so a dump reloads exactly.
"""

from dataclasses import dataclass
from enum import Enum
from typing import IO, List, Optional, Sequence, Tuple, Union
import logging
import math
import time
import warnings

import numpy as np
from scipy import sparse
from scipy.linalg import LinAlgWarning, lu_factor, lu_solve

from app.core.cones import ConeLayout
from app.core.exceptions import ConicSolverError
from app.core.presolve import PresolveResult, presolve
from app.models.schemas import SolverStatus

logger = logging.getLogger(__name__)

REFINE_STEPS = 3
REG_PRIMAL = 1e-10
REG_DUAL = 1e-10
RELAXED_FACTOR = 1e3
MIN_STEP = 1e-10


class ConeKind(str, Enum):
    FREE = "free"
    NONNEG = "nonneg"
    SOC = "soc"
    RSOC = "rsoc"


@dataclass(frozen=True)
class ConeBlock:
    kind: ConeKind
    dim: int

    def __post_init__(self):
        minimum = {ConeKind.FREE: 1, ConeKind.NONNEG: 1, ConeKind.SOC: 2, ConeKind.RSOC: 3}[self.kind]
        if self.dim < minimum:
            raise ValueError(f"{self.kind.value} cone needs dimension >= {minimum}, got {self.dim}")


@dataclass(frozen=True, eq=False)
class StandardConicProgram:
    c: np.ndarray
    A: sparse.csr_matrix
    b: np.ndarray
    cones: Tuple[ConeBlock, ...]
    offset: float = 0.0

    def __post_init__(self):
        n = sum(block.dim for block in self.cones)
        if self.c.shape != (n,):
            raise ValueError(f"objective has {self.c.size} entries, cones cover {n}")
        if self.A.shape != (self.b.size, n):
            raise ValueError(f"A is {self.A.shape}, expected ({self.b.size}, {n})")

    @property
    def n(self) -> int:
        return self.c.size

    @property
    def m(self) -> int:
        return self.b.size

    def block_slices(self) -> List[Tuple[ConeBlock, slice]]:
        out = []
        pos = 0
        for block in self.cones:
            out.append((block, slice(pos, pos + block.dim)))
            pos += block.dim
        return out


@dataclass
class SolverOptions:
    tol_p: float = 1e-8
    tol_d: float = 1e-8
    tol_gap: float = 1e-8
    tol_infeas: float = 1e-8
    max_iter: int = 200
    step_factor: float = 0.99

    @classmethod
    def from_settings(cls, settings) -> "SolverOptions":
        return cls(
            tol_p=settings.SOLVER_TOL_P,
            tol_d=settings.SOLVER_TOL_D,
            tol_gap=settings.SOLVER_TOL_GAP,
            tol_infeas=settings.SOLVER_TOL_INFEAS,
            max_iter=settings.SOLVER_MAX_ITER,
            step_factor=settings.SOLVER_STEP_FACTOR,
        )


@dataclass(frozen=True)
class Residuals:
    primal: float
    dual: float
    gap: float


@dataclass
class ConicSolution:
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    status: SolverStatus
    residuals: Residuals
    iterations: int = 0
    objective: float = math.nan
    inaccurate: bool = False
    certificate: Optional[np.ndarray] = None
    solve_seconds: float = 0.0

    @property
    def is_optimal(self) -> bool:
        return self.status == SolverStatus.OPTIMAL

    @property
    def is_usable(self) -> bool:
        """Optimal, or stalled within the relaxed tolerance"""
        return self.status in (SolverStatus.OPTIMAL, SolverStatus.INACCURATE)


def kkt_residuals(program: StandardConicProgram, solution: ConicSolution) -> Residuals:
    """Absolute infinity-norm residuals recomputed from the original program"""
    x, y, s = solution.x, solution.y, solution.s
    if x.size != program.n or s.size != program.n or y.size != program.m:
        raise ValueError("solution dimensions do not match the program")
    primal = program.A @ x - program.b
    dual = program.c - program.A.T @ y - s
    return Residuals(
        primal=float(np.max(np.abs(primal))) if primal.size else 0.0,
        dual=float(np.max(np.abs(dual))) if dual.size else 0.0,
        gap=abs(float(program.c @ x - program.b @ y)),
    )


def _norm(v: np.ndarray) -> float:
    return float(np.max(np.abs(v))) if v.size else 0.0


class _KktSystem:
    """Regularized quasi-definite system [[-H, A'], [A, 0]] with iterative refinement"""

    def __init__(self, A: np.ndarray, H: np.ndarray):
        m, n = A.shape
        self.n = n
        K = np.zeros((n + m, n + m))
        K[:n, :n] = -H
        K[:n, n:] = A.T
        K[n:, :n] = A
        self.K = K
        K_reg = K.copy()
        K_reg[np.arange(n), np.arange(n)] -= REG_PRIMAL
        K_reg[n + np.arange(m), n + np.arange(m)] += REG_DUAL
        with warnings.catch_warnings():
            warnings.simplefilter("error", LinAlgWarning)
            try:
                self.lu = lu_factor(K_reg, check_finite=False)
            except (LinAlgWarning, ValueError, np.linalg.LinAlgError) as e:
                raise ConicSolverError(f"KKT factorization failed: {e}")
        pivots = np.abs(np.diag(self.lu[0]))
        if not np.all(np.isfinite(pivots)) or pivots.min(initial=1.0) == 0.0:
            raise ConicSolverError("numerically singular KKT system")

    def solve(self, r_x: np.ndarray, r_y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        rhs = np.concatenate([r_x, r_y])
        sol = lu_solve(self.lu, rhs, check_finite=False)
        scale = 1.0 + _norm(rhs)
        for _ in range(REFINE_STEPS):
            err = rhs - self.K @ sol
            if _norm(err) <= 1e-15 * scale:
                break
            sol = sol + lu_solve(self.lu, err, check_finite=False)
        if not np.all(np.isfinite(sol)):
            raise ConicSolverError("KKT solve produced non-finite values")
        return sol[:self.n], sol[self.n:]


@dataclass
class _Iterate:
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    tau: float
    kappa: float


@dataclass
class _Direction:
    dx: np.ndarray
    dy: np.ndarray
    ds: np.ndarray
    dtau: float
    dkappa: float


@dataclass
class _IpmOutcome:
    status: SolverStatus
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    iterations: int
    inaccurate: bool = False


class InteriorPointSolver:
    """
    Primal-dual path following on the homogeneous self-dual embedding with
    Nesterov-Todd scaling and a Mehrotra predictor-corrector. Single use per
    solve call; instances hold no state between calls.
    """

    def __init__(self, options: Optional[SolverOptions] = None):
        self.options = options or SolverOptions()

    def solve(self, program: StandardConicProgram) -> ConicSolution:
        started = time.perf_counter()
        blocks = [(block.kind.value, block.dim) for block in program.cones]
        pre = presolve(program.c.astype(float), program.A.toarray(), program.b.astype(float), blocks)

        if pre.status is not None:
            solution = self._certificate_solution(program, pre)
        else:
            outcome = self._run(pre.c, pre.A, pre.b, ConeLayout.from_blocks(pre.blocks))
            if outcome.status == SolverStatus.INFEASIBLE:
                _, y, _ = pre.postsolve(np.zeros(pre.cols_kept.size), outcome.y,
                                        np.zeros(pre.cols_kept.size), homogeneous=True)
                solution = self._infeasible_solution(program, y, outcome.iterations)
            elif outcome.status == SolverStatus.UNBOUNDED:
                x, _, _ = pre.postsolve(outcome.x, np.zeros(pre.rows_kept.size),
                                        np.zeros(pre.cols_kept.size), homogeneous=True)
                solution = self._unbounded_solution(program, x, outcome.iterations)
            else:
                x, y, s = pre.postsolve(outcome.x, outcome.y, outcome.s)
                solution = ConicSolution(
                    x=x, y=y, s=s, status=outcome.status,
                    residuals=Residuals(0.0, 0.0, 0.0), iterations=outcome.iterations,
                    objective=float(program.c @ x) + program.offset, inaccurate=outcome.inaccurate,
                )
        solution.residuals = kkt_residuals(program, solution)
        solution.solve_seconds = time.perf_counter() - started
        if solution.inaccurate:
            logger.warning(f"Conic solve stalled within the relaxed tolerance after {solution.iterations} iterations")
        logger.debug(
            f"Conic solve: status={solution.status.value} iterations={solution.iterations} "
            f"primal={solution.residuals.primal:.2e} dual={solution.residuals.dual:.2e} gap={solution.residuals.gap:.2e}"
        )
        return solution

    # ------------------------------------------------------------------
    # certificates

    def _certificate_solution(self, program: StandardConicProgram, pre: PresolveResult) -> ConicSolution:
        if pre.status == "infeasible":
            return self._infeasible_solution(program, pre.certificate_y, 0)
        return self._unbounded_solution(program, pre.certificate_x, 0)

    @staticmethod
    def _infeasible_solution(program: StandardConicProgram, y: np.ndarray, iterations: int) -> ConicSolution:
        scale = float(program.b @ y)
        if scale > 0:
            y = y / scale
        s = -(program.A.T @ y)
        return ConicSolution(
            x=np.zeros(program.n), y=y, s=np.asarray(s).ravel(), status=SolverStatus.INFEASIBLE,
            residuals=Residuals(0.0, 0.0, 0.0), iterations=iterations, certificate=y,
        )

    @staticmethod
    def _unbounded_solution(program: StandardConicProgram, x: np.ndarray, iterations: int) -> ConicSolution:
        scale = -float(program.c @ x)
        if scale > 0:
            x = x / scale
        return ConicSolution(
            x=x, y=np.zeros(program.m), s=np.zeros(program.n), status=SolverStatus.UNBOUNDED,
            residuals=Residuals(0.0, 0.0, 0.0), iterations=iterations, certificate=x,
        )

    # ------------------------------------------------------------------
    # interior point loop

    def _run(self, c: np.ndarray, A: np.ndarray, b: np.ndarray, cones: ConeLayout) -> _IpmOutcome:
        opts = self.options
        m, n = A.shape
        e = cones.identity()
        free = cones.free_mask
        nu = cones.degree
        it = _Iterate(x=e.copy(), y=np.zeros(m), s=e.copy(), tau=1.0, kappa=1.0)
        norm_b = 1.0 + _norm(b)
        norm_c = 1.0 + _norm(c)

        if n == 0:
            return _IpmOutcome(SolverStatus.OPTIMAL, np.zeros(0), np.zeros(m), np.zeros(0), 0)

        def relative_errors(cur: _Iterate) -> Tuple[float, float, float]:
            x, y, s = cur.x / cur.tau, cur.y / cur.tau, cur.s / cur.tau
            cx = float(c @ x)
            return (
                _norm(A @ x - b) / norm_b,
                _norm(c - A.T @ y - s) / norm_c,
                abs(cx - float(b @ y)) / (1.0 + abs(cx)),
            )

        iteration = 0
        for iteration in range(opts.max_iter + 1):
            x, y, s, tau, kappa = it.x, it.y, it.s, it.tau, it.kappa
            p_err, d_err, g_err = relative_errors(it)
            if p_err <= opts.tol_p and d_err <= opts.tol_d and g_err <= opts.tol_gap:
                return _IpmOutcome(SolverStatus.OPTIMAL, x / tau, y / tau, s / tau, iteration)

            by, cx = float(b @ y), float(c @ x)
            if by > 0 and tau < kappa and _norm(A.T @ y + s) <= opts.tol_infeas * by:
                return _IpmOutcome(SolverStatus.INFEASIBLE, x, y / by, s / by, iteration)
            if cx < 0 and tau < kappa and _norm(A @ x) <= opts.tol_infeas * (-cx):
                return _IpmOutcome(SolverStatus.UNBOUNDED, x / (-cx), y, s, iteration)
            if iteration == opts.max_iter:
                break

            r_p = b * tau - A @ x
            r_d = c * tau - A.T @ y - s
            r_g = cx - by + kappa
            mu = (float(x @ s) + tau * kappa) / (nu + 1)

            W = cones.scaling(x, s)
            lam = W.lam
            H = W.hessian()
            kkt = _KktSystem(A, H)
            dx1, dy1 = kkt.solve(c, b)
            denom = float(b @ dy1 - c @ dx1) + kappa / tau

            def direction(eta: float, r_c: np.ndarray, r_tk: float) -> _Direction:
                w_q = W.apply(cones.inverse_product(lam, r_c))
                dx2, dy2 = kkt.solve(eta * r_d - w_q, eta * r_p)
                dtau = (eta * r_g + float(c @ dx2 - b @ dy2) + r_tk / tau) / denom
                dx = dx2 + dtau * dx1
                dy = dy2 + dtau * dy1
                ds = w_q - H @ dx
                ds[free] = 0.0
                dkappa = (r_tk - kappa * dtau) / tau
                return _Direction(dx, dy, ds, dtau, dkappa)

            lam_sq = cones.jordan(lam, lam)
            affine = direction(1.0, -lam_sq, -tau * kappa)
            alpha_aff = min(1.0, self._max_step(cones, it, affine))
            sigma = (1.0 - alpha_aff) ** 3

            r_c = -lam_sq - cones.jordan(W.apply(affine.dx), W.apply_inv(affine.ds)) + sigma * mu * e
            r_tk = -tau * kappa - affine.dtau * affine.dkappa + sigma * mu
            step = direction(1.0 - sigma, r_c, r_tk)
            alpha = min(1.0, opts.step_factor * self._max_step(cones, it, step))
            if not math.isfinite(alpha) or alpha < MIN_STEP:
                logger.debug(f"Interior point stalled at iteration {iteration} (step {alpha:.2e})")
                break

            it = _Iterate(
                x=x + alpha * step.dx, y=y + alpha * step.dy, s=s + alpha * step.ds,
                tau=tau + alpha * step.dtau, kappa=kappa + alpha * step.dkappa,
            )

        p_err, d_err, g_err = relative_errors(it)
        relaxed = RELAXED_FACTOR
        if p_err <= relaxed * opts.tol_p and d_err <= relaxed * opts.tol_d and g_err <= relaxed * opts.tol_gap:
            return _IpmOutcome(SolverStatus.INACCURATE, it.x / it.tau, it.y / it.tau, it.s / it.tau,
                               iteration, inaccurate=True)
        return _IpmOutcome(SolverStatus.MAX_ITER, it.x / it.tau, it.y / it.tau, it.s / it.tau, iteration)

    @staticmethod
    def _max_step(cones: ConeLayout, it: _Iterate, d: _Direction) -> float:
        alpha = min(cones.max_step(it.x, d.dx), cones.max_step(it.s, d.ds))
        if d.dtau < 0:
            alpha = min(alpha, -it.tau / d.dtau)
        if d.dkappa < 0:
            alpha = min(alpha, -it.kappa / d.dkappa)
        return alpha


def solve(program: StandardConicProgram, options: Optional[SolverOptions] = None) -> ConicSolution:
    return InteriorPointSolver(options).solve(program)


# ----------------------------------------------------------------------
# sparse-triplet dump

def dump_program(program: StandardConicProgram, stream: IO[str]) -> None:
    stream.write("# conic program: minimize c'x + offset s.t. Ax = b, x in cones\n")
    stream.write(f"dims {program.m} {program.n}\n")
    stream.write("cones " + " ".join(f"{b.kind.value}:{b.dim}" for b in program.cones) + "\n")
    stream.write(f"offset {program.offset!r}\n")
    for j in np.flatnonzero(program.c):
        stream.write(f"c {j} {float(program.c[j])!r}\n")
    for i in np.flatnonzero(program.b):
        stream.write(f"b {i} {float(program.b[i])!r}\n")
    coo = program.A.tocoo()
    for i, j, v in sorted(zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist())):
        stream.write(f"A {i} {j} {float(v)!r}\n")


def load_program(stream: IO[str]) -> StandardConicProgram:
    m = n = None
    cones: List[ConeBlock] = []
    offset = 0.0
    c_entries, b_entries, a_rows, a_cols, a_vals = [], [], [], [], []
    for lineno, raw in enumerate(stream, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tag, *fields = line.split()
        try:
            if tag == "dims":
                m, n = int(fields[0]), int(fields[1])
            elif tag == "cones":
                for token in fields:
                    kind, dim = token.split(":")
                    cones.append(ConeBlock(ConeKind(kind), int(dim)))
            elif tag == "offset":
                offset = float(fields[0])
            elif tag == "c":
                c_entries.append((int(fields[0]), float(fields[1])))
            elif tag == "b":
                b_entries.append((int(fields[0]), float(fields[1])))
            elif tag == "A":
                a_rows.append(int(fields[0]))
                a_cols.append(int(fields[1]))
                a_vals.append(float(fields[2]))
            else:
                raise ValueError(f"unknown record '{tag}'")
        except (IndexError, ValueError) as e:
            raise ConicSolverError(f"program dump line {lineno}: {e}")
    if m is None or n is None:
        raise ConicSolverError("program dump has no dims record")
    c = np.zeros(n)
    for j, v in c_entries:
        c[j] = v
    b = np.zeros(m)
    for i, v in b_entries:
        b[i] = v
    A = sparse.csr_matrix((a_vals, (a_rows, a_cols)), shape=(m, n))
    return StandardConicProgram(c=c, A=A, b=b, cones=tuple(cones), offset=offset)


ConeSpec = Union[ConeBlock, Tuple[str, int]]


def make_program(c: Sequence[float], A, b: Sequence[float], cones: Sequence[ConeSpec],
                 offset: float = 0.0) -> StandardConicProgram:
    """Convenience constructor accepting dense arrays and (kind, dim) tuples"""
    blocks = tuple(cb if isinstance(cb, ConeBlock) else ConeBlock(ConeKind(cb[0]), int(cb[1])) for cb in cones)
    c_arr = np.asarray(c, dtype=float)
    b_arr = np.asarray(b, dtype=float)
    A_mat = sparse.csr_matrix(np.asarray(A, dtype=float).reshape(b_arr.size, c_arr.size)) \
        if not sparse.issparse(A) else sparse.csr_matrix(A)
    return StandardConicProgram(c=c_arr, A=A_mat, b=b_arr, cones=blocks, offset=offset)
