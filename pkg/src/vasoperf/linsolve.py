"""Sparse linear solves with an explicit accuracy contract.

Any method reaching a relative residual of 1e-10 is conformant; the default
is a sparse direct factorization, which is also bitwise deterministic for
fixed inputs.
"""

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from vasoperf.errors import NumericError

RESIDUAL_TOL = 1e-10


def apply_dirichlet(a: sp.spmatrix, b: np.ndarray, idx: np.ndarray,
                    values: np.ndarray):
    """Eliminate Dirichlet dofs symmetrically: rows/cols zeroed, unit
    diagonal, known values lifted to the right-hand side."""
    idx = np.asarray(idx, dtype=int)
    values = np.asarray(values, dtype=float)
    n = a.shape[0]
    lift = np.zeros(n)
    lift[idx] = values
    b = b - a @ lift
    mask = np.ones(n)
    mask[idx] = 0.0
    dmask = sp.diags(mask)
    a = dmask @ a @ dmask + sp.diags(1.0 - mask)
    b = b * mask
    b[idx] = values
    return a.tocsr(), b


def solve_checked(a: sp.spmatrix, b: np.ndarray, rtol: float = RESIDUAL_TOL) -> np.ndarray:
    """Direct sparse solve with a residual check."""
    x = spla.spsolve(a.tocsc(), b)
    if np.any(~np.isfinite(x)):
        raise NumericError("linear solve produced non-finite values "
                           "(singular or severely ill-conditioned system)")
    scale = float(np.linalg.norm(b))
    res = float(np.linalg.norm(a @ x - b))
    rel = res / scale if scale > 0 else res
    if rel > rtol:
        raise NumericError(f"linear solve residual {rel:.3e} exceeds {rtol:.1e}")
    return x
