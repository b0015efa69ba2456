"""Vectorized 3D finite element assembly shared by both models.

Hexahedra must be axis-aligned (as produced by the internal mesh generator);
tetrahedra are general. Coefficients may be scalars or per-element arrays.
Accumulation order is fixed by element id, so assembly is deterministic.
"""

import numpy as np
import scipy.sparse as sp

from vasoperf.errors import ConfigError
from vasoperf.mesh import HEX8, TissueMesh, gauss_points_hex

_HEX_PTS, _HEX_WTS = gauss_points_hex(2)


def _per_element(coeff, elements) -> np.ndarray:
    c = np.asarray(coeff, dtype=float)
    if c.ndim == 0:
        return np.full(len(elements), float(c))
    if c.shape[0] == len(elements):
        return c
    return c[elements]


def _hex_grad_products():
    """S[d][a,b] = sum_g w_g dN_a/dxi_d dN_b/dxi_d on the reference cube."""
    from vasoperf.mesh import HEX_BASIS
    grads = HEX_BASIS.gradients(_HEX_PTS)  # (8, 8, 3)
    s = np.empty((3, 8, 8))
    for d in range(3):
        gd = grads[:, :, d]
        s[d] = (gd * _HEX_WTS[:, None]).T @ gd
    return s


def _hex_mass_ref():
    from vasoperf.mesh import HEX_BASIS
    vals = HEX_BASIS.values(_HEX_PTS)  # (8, 8)
    return (vals * _HEX_WTS[:, None]).T @ vals


_HEX_S = _hex_grad_products()
_HEX_MASS = _hex_mass_ref()
_TET_MASS = (np.ones((4, 4)) + np.eye(4)) / 20.0


def _scatter(mesh, elements, local, n_rows, n_cols, row_map=None, col_map=None):
    conn = mesh.conn[elements]
    rows_idx = conn if row_map is None else row_map[conn]
    cols_idx = conn if col_map is None else col_map[conn]
    nn = conn.shape[1]
    rows = np.repeat(rows_idx, nn, axis=1).ravel()
    cols = np.tile(cols_idx, (1, nn)).ravel()
    return sp.coo_matrix((local.reshape(len(elements), -1).ravel(), (rows, cols)),
                         shape=(n_rows, n_cols)).tocsr()


def darcy_stiffness(mesh: TissueMesh, coeff, elements=None,
                    row_map=None, col_map=None, n_rows=None, n_cols=None):
    """Assemble int coeff grad(N_a) . grad(N_b) dV over the given elements."""
    if elements is None:
        elements = np.arange(mesh.n_elements)
    elements = np.asarray(elements, dtype=int)
    c = _per_element(coeff, elements)
    n_rows = n_rows if n_rows is not None else mesh.n_nodes
    n_cols = n_cols if n_cols is not None else mesh.n_nodes
    if not len(elements):
        return sp.csr_matrix((n_rows, n_cols))
    if mesh.kind == HEX8:
        if not mesh.axis_aligned:
            raise ConfigError("stiffness assembly requires axis-aligned hexahedra")
        h = mesh.elem_hi[elements] - mesh.elem_lo[elements]  # (ne, 3)
        det = np.prod(h, axis=1) / 8.0
        scal = c[:, None] * det[:, None] * 4.0 / h**2  # (ne, 3)
        local = np.einsum("ed,dab->eab", scal, _HEX_S)
    else:
        verts = mesh.nodes[mesh.conn[elements]]  # (ne, 4, 3)
        d = verts[:, 1:] - verts[:, :1]
        detj = np.linalg.det(d)
        vols = np.abs(detj) / 6.0
        dinv = np.linalg.inv(d)  # (ne, 3, 3)
        gref = np.array([[-1.0, -1.0, -1.0], [1.0, 0.0, 0.0],
                         [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        gphys = np.einsum("ab,ebd->ead", gref, dinv)  # (ne, 4, 3)
        local = np.einsum("e,ead,ebd->eab", c * vols, gphys, gphys)
    return _scatter(mesh, elements, local, n_rows, n_cols, row_map, col_map)


def volume_mass(mesh: TissueMesh, coeff, elements=None,
                row_map=None, col_map=None, n_rows=None, n_cols=None):
    """Assemble int coeff N_a N_b dV over the given elements."""
    if elements is None:
        elements = np.arange(mesh.n_elements)
    elements = np.asarray(elements, dtype=int)
    c = _per_element(coeff, elements)
    n_rows = n_rows if n_rows is not None else mesh.n_nodes
    n_cols = n_cols if n_cols is not None else mesh.n_nodes
    if not len(elements):
        return sp.csr_matrix((n_rows, n_cols))
    if mesh.kind == HEX8:
        if not mesh.axis_aligned:
            raise ConfigError("mass assembly requires axis-aligned hexahedra")
        det = np.prod(mesh.elem_hi[elements] - mesh.elem_lo[elements], axis=1) / 8.0
        local = (c * det)[:, None, None] * _HEX_MASS[None, :, :]
    else:
        verts = mesh.nodes[mesh.conn[elements]]
        d = verts[:, 1:] - verts[:, :1]
        vols = np.abs(np.linalg.det(d)) / 6.0
        local = (c * vols)[:, None, None] * _TET_MASS[None, :, :]
    return _scatter(mesh, elements, local, n_rows, n_cols, row_map, col_map)


def volume_load(mesh: TissueMesh, coeff, elements=None, index_map=None, n=None):
    """Assemble int coeff N_a dV into a vector."""
    if elements is None:
        elements = np.arange(mesh.n_elements)
    elements = np.asarray(elements, dtype=int)
    c = _per_element(coeff, elements)
    n = n if n is not None else mesh.n_nodes
    out = np.zeros(n)
    if not len(elements):
        return out
    if mesh.kind == HEX8:
        vols = np.prod(mesh.elem_hi[elements] - mesh.elem_lo[elements], axis=1)
    else:
        verts = mesh.nodes[mesh.conn[elements]]
        vols = np.abs(np.linalg.det(verts[:, 1:] - verts[:, :1])) / 6.0
    nn = mesh.basis.n_nodes
    contrib = (c * vols / nn)[:, None] * np.ones((1, nn))
    idx = mesh.conn[elements] if index_map is None else index_map[mesh.conn[elements]]
    np.add.at(out, idx.ravel(), contrib.ravel())
    return out
