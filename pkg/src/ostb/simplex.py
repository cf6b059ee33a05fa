"""Revised simplex method for ``max c @ x  s.t.  A @ x = b, x >= 0``.

The basis inverse is kept as a sparse LU factorisation of the starting
basis followed by a product of eta matrices, one per pivot, and is
refactorised periodically.  Pivoting is deterministic: Dantzig's largest
reduced cost by default, or Bland's rule (smallest eligible entering
index); either way ties go to the smallest index.  Bland's rule cannot
cycle but needs far more pivots on the occupation LPs of this package.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class LpError(RuntimeError):
    pass


class InfeasibleError(LpError):
    pass


class UnboundedError(LpError):
    pass


class SingularBasisError(LpError):
    pass


@dataclass
class LpResult:
    x: np.ndarray
    objective: float
    basis: np.ndarray
    duals: np.ndarray
    iterations: int


class _BasisInverse:
    def __init__(self, A: sp.csc_matrix, basis: np.ndarray):
        B = A[:, basis].tocsc()
        try:
            self.lu = spla.splu(B, permc_spec="COLAMD")
        except RuntimeError as exc:
            raise SingularBasisError(str(exc)) from None
        if not np.all(np.isfinite(self.lu.U.diagonal())) or np.min(np.abs(self.lu.U.diagonal())) < 1e-13:
            raise SingularBasisError("basis matrix is numerically singular")
        self.etas: list[tuple[int, np.ndarray]] = []

    def ftran(self, v: np.ndarray) -> np.ndarray:
        v = self.lu.solve(v)
        for r, w in self.etas:
            vr = v[r] / w[r]
            v -= vr * w
            v[r] = vr
        return v

    def btran(self, c: np.ndarray) -> np.ndarray:
        u = c.copy()
        for r, w in reversed(self.etas):
            ur = (u[r] - (u @ w - u[r] * w[r])) / w[r]
            u[r] = ur
        return self.lu.solve(u, trans="T")

    def pivot(self, r: int, w: np.ndarray) -> None:
        self.etas.append((r, w.copy()))


def _iterate(A, b, c, basis, enter_mask, rule, tol, max_iter, refactor_every,
             artificial_from=None, start_iter=0, pivot_tol=1e-9, feas_tol=1e-12):
    m, n = A.shape
    basis = np.array(basis, dtype=np.int64)
    inv = _BasisInverse(A, basis)
    xB = inv.ftran(b.astype(float))
    if np.any(xB < -1e-7):
        raise InfeasibleError("starting basis is not primal feasible")
    xB = np.maximum(xB, 0.0)
    in_basis = np.zeros(n, dtype=bool)
    in_basis[basis] = True
    it = start_iter
    since_refactor = 0
    while True:
        y = inv.btran(c[basis])
        d = c - A.T @ y
        d[in_basis] = 0.0
        d[~enter_mask] = 0.0
        eligible = np.flatnonzero(d > tol)
        if eligible.size == 0:
            if since_refactor == 0:
                return basis, xB, y, it
            # confirm optimality on a fresh factorisation, without eta drift
            inv = _BasisInverse(A, basis)
            xB = np.maximum(inv.ftran(b.astype(float)), 0.0)
            since_refactor = 0
            continue
        if it >= max_iter:
            raise LpError(f"simplex did not converge within {max_iter} iterations")
        q = int(eligible[0]) if rule == "bland" else int(eligible[np.argmax(d[eligible])])
        col = A[:, q].toarray().ravel()
        w = inv.ftran(col)

        r = -1
        if artificial_from is not None:
            # artificials left in the basis must stay at zero
            art_rows = np.flatnonzero((basis >= artificial_from) & (np.abs(w) > pivot_tol))
            if art_rows.size:
                r = int(art_rows[np.argmin(basis[art_rows])])
        if r < 0:
            rows = np.flatnonzero(w > pivot_tol)
            if rows.size == 0:
                raise UnboundedError("linear program is unbounded")
            # two-pass ratio test: largest pivot among rows within the relaxed bound
            bound = ((xB[rows] + feas_tol) / w[rows]).min()
            ties = rows[xB[rows] / w[rows] <= bound]
            wt = w[ties]
            ties = ties[wt >= wt.max() * (1 - 1e-12)]
            r = int(ties[np.argmin(basis[ties])])
        step = max(xB[r] / w[r], 0.0)
        xB -= step * w
        xB[r] = step
        np.maximum(xB, 0.0, out=xB)

        in_basis[basis[r]] = False
        in_basis[q] = True
        basis[r] = q
        inv.pivot(r, w)
        it += 1
        since_refactor += 1
        if since_refactor >= refactor_every:
            inv = _BasisInverse(A, basis)
            xB = np.maximum(inv.ftran(b.astype(float)), 0.0)
            since_refactor = 0


def solve(A, b, c, basis=None, rule: str = "dantzig", tol: float = 1e-10,
          max_iter: int = 1_000_000, refactor_every: int = 64) -> LpResult:
    """Solve ``max c @ x`` subject to ``A @ x = b``, ``x >= 0``.

    ``basis`` optionally names ``m`` columns forming a primal feasible
    starting basis; without one a phase-one problem with artificial
    variables is solved first.  ``duals`` satisfy ``A.T @ duals >= c`` at
    the optimum (up to ``tol``).
    """
    if rule not in ("bland", "dantzig"):
        raise ValueError(f"unknown pivot rule {rule!r}")
    A = sp.csc_matrix(A, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    m, n = A.shape
    if b.shape != (m,) or c.shape != (n,):
        raise ValueError("dimension mismatch")

    if basis is not None:
        basis = np.asarray(basis, dtype=np.int64)
        if basis.shape != (m,):
            raise ValueError("starting basis must have one column per row")
        basis, xB, y, it = _iterate(A, b, c, basis, np.ones(n, bool), rule, tol,
                                    max_iter, refactor_every)
        x = np.zeros(n)
        x[basis] = xB
        return LpResult(x, float(c @ x), basis, y, it)

    sign = np.where(b < 0, -1.0, 1.0)
    A1 = sp.hstack([A, sp.diags(sign)], format="csc")
    c1 = np.concatenate([np.zeros(n), -np.ones(m)])
    basis = np.arange(n, n + m)
    mask = np.concatenate([np.ones(n, bool), np.zeros(m, bool)])
    basis, xB, _, it = _iterate(A1, b, c1, basis, mask, rule, tol, max_iter,
                                refactor_every)
    if xB[basis >= n].sum() > 1e-8 * max(1.0, np.abs(b).max()):
        raise InfeasibleError("linear program is infeasible")
    c2 = np.concatenate([c, np.zeros(m)])
    basis, xB, y, it = _iterate(A1, b, c2, basis, mask, rule, tol, max_iter,
                                refactor_every, artificial_from=n, start_iter=it)
    x = np.zeros(n + m)
    x[basis] = xB
    return LpResult(x[:n], float(c @ x[:n]), basis, y, it)
