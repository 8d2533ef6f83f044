"""One-time assembly of the HDG system matrices.

Builds every global sparse matrix and vector of the block system

    [ A3    -A4          A5 ] [alpha]   [ 0                      ]
    [ A4^T   M/dt+A6    -A7 ] [beta ] + [ A9 F(B11 alpha + B12 beta) ] = b
    [ A5^T   A7^T       -A8 ] [zeta ]   [ 0                      ]

plus the element-local postprocessing blocks B11, B12 that map the flux
and scalar coefficients to the degree-(k+1) postprocessed coefficients.
Element-block (dense, batched) copies of everything element-local are
kept for static condensation.

The nonlinearity never appears under a quadrature sign: its discrete
contribution is A9 applied to pointwise nodal values, so all matrices
here are assembled exactly once per run. Module-level `counters` record
the number of assembly calls for verification.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from . import felib
from .felib import DofLayout
from .projections import _edge_geometry, _edge_ref_points, _physical_quad

counters = {"assemble_system": 0, "build_postprocessing_blocks": 0}


def reset_counters():
    for key in counters:
        counters[key] = 0


class AssemblyError(RuntimeError):
    pass


class SystemMatrices:
    """Once-assembled matrices of a scalar HDG discretization.

    Global sparse matrices follow the naming of the block system above.
    Attributes ending in `e` are per-element dense blocks, shape
    (ne, rows, cols); `elem_trace_dofs` maps each element's 3*(k+1)
    local trace dofs to global trace indices (-1 where a Dirichlet
    boundary face carries no dof). `B11e`/`B12e` are populated by
    build_postprocessing_blocks.
    """

    def __init__(self, mesh, layout: DofLayout, tau):
        self.mesh = mesh
        self.layout = layout
        self.tau = tau
        # sparse globals, set by assemble_system
        self.A1 = self.A2 = self.A3 = self.A4 = self.A5 = None
        self.A6 = self.A7 = self.A8 = self.A9 = self.M = None
        self.b1 = self.b2 = None
        self.B11 = self.B12 = None
        self.B11e = self.B12e = None


def _block_diag_sparse(blocks, row_dofs, col_dofs):
    """Scatter (ne, r, c) element blocks into a CSR matrix."""
    ne, r, c = blocks.shape
    rows = np.repeat(row_dofs, c, axis=1).reshape(ne, r, c)
    cols = np.tile(col_dofs[:, None, :], (1, r, 1))
    nrow = int(row_dofs.max()) + 1 if row_dofs.size else 0
    ncol = int(col_dofs.max()) + 1 if col_dofs.size else 0
    A = sp.coo_matrix(
        (blocks.ravel(), (rows.ravel(), cols.ravel())), shape=(nrow, ncol)
    ).tocsr()
    A.sum_duplicates()
    A.eliminate_zeros()
    return A


def _elem_dof_arrays(layout: DofLayout):
    ne, nk, nk1 = layout.num_elements, layout.nk, layout.nk1
    vdofs = np.arange(2 * nk * ne, dtype=np.int64).reshape(ne, 2 * nk)
    wdofs = np.arange(nk * ne, dtype=np.int64).reshape(ne, nk)
    zdofs = np.arange(nk1 * ne, dtype=np.int64).reshape(ne, nk1)
    return vdofs, wdofs, zdofs


def elem_trace_dofs(mesh, layout: DofLayout):
    """(ne, 3*(k+1)) global trace dof of each local edge dof, -1 inactive."""
    kp1 = layout.k + 1
    out = np.full((mesh.num_elements, 3 * kp1), -1, dtype=np.int64)
    for le in range(3):
        f = mesh.element_faces[:, le]
        off = layout.face_offset[f]
        cols = le * kp1 + np.arange(kp1)
        active = off >= 0
        out[np.ix_(active, cols)] = off[active, None] + np.arange(kp1)[None, :]
    return out


def assemble_system(mesh, layout: DofLayout, tau=1.0) -> SystemMatrices:
    """Assemble all global matrices and element blocks. Runs once per
    solver run; `counters["assemble_system"]` is incremented."""
    counters["assemble_system"] += 1
    k = layout.k
    ne = mesh.num_elements
    nk, nk1, kp1 = layout.nk, layout.nk1, k + 1
    tau_e = np.broadcast_to(np.asarray(tau, dtype=float), (ne,)).astype(float)
    if np.any(tau_e < 0) or np.any(tau_e == 0):
        raise AssemblyError("tau must be positive on every element")
    sys = SystemMatrices(mesh, layout, tau_e)

    ref = felib.build_reference(k)
    refz = felib.build_reference(k + 1)
    rule = felib.triangle_quadrature(felib.volume_exactness(k))
    srule = felib.edge_quadrature(felib.edge_exactness(k))
    eb = felib.build_edge_basis(k)

    B, _, detB = mesh.element_maps()
    invBT = np.linalg.inv(B).transpose(0, 2, 1)  # (ne, 2, 2)

    phi = ref.eval(rule.points)  # (nq, nk)
    gphi_ref = ref.grad(rule.points)  # (nq, nk, 2)
    chi = refz.eval(rule.points)  # (nq, nk1)
    gchi_ref = refz.grad(rule.points)  # (nq, nk1, 2)
    wq = detB[:, None] * rule.weights[None, :]  # (ne, nq)

    gphi = np.einsum("eab,qib->eqia", invBT, gphi_ref)  # (ne, nq, nk, 2)
    gchi = np.einsum("eab,qib->eqia", invBT, gchi_ref)

    # volume blocks
    A1e = np.einsum("eq,eqja,eqia->eij", wq, gchi, gchi)
    Me = np.einsum("eq,qj,qi->eij", wq, phi, phi)
    A9e = np.einsum("eq,qj,qi->eij", wq, chi, phi)  # (ne, nk, nk1)
    b1e = np.einsum("eq,qj->ej", wq, chi)
    b2e = np.einsum("eq,qj->ej", wq, phi)

    # vector-valued blocks, flux dofs component-major [x nodes | y nodes]
    A2e = np.zeros((ne, nk1, 2 * nk))
    A3e = np.zeros((ne, 2 * nk, 2 * nk))
    A4e = np.zeros((ne, 2 * nk, nk))
    for c in range(2):
        cols = slice(c * nk, (c + 1) * nk)
        A2e[:, :, cols] = np.einsum("eq,qj,eqi->eij", wq, phi, gchi[..., c])
        A3e[:, cols, cols] = Me
        A4e[:, cols, :] = np.einsum("eq,qj,eqi->eij", wq, phi, gphi[..., c])

    # edge blocks
    A5e = np.zeros((ne, 2 * nk, 3 * kp1))
    A6e = np.zeros((ne, nk, nk))
    A7e = np.zeros((ne, nk, 3 * kp1))
    mu_fwd = eb.eval(srule.points)  # face param equals element param
    mu_rev = eb.eval(1.0 - srule.points)
    for le in range(3):
        x, y, w, n = _edge_geometry(mesh, le, srule)
        tr = ref.eval(_edge_ref_points(le, srule.points))  # (nq, nk)
        # face orientation: stored face vertex order vs element traversal
        fidx = mesh.element_faces[:, le]
        fwd = mesh.faces[fidx, 0] == mesh.elements[:, le]
        mu = np.where(fwd[:, None, None], mu_fwd[None, :, :], mu_rev[None, :, :])
        tcols = slice(le * kp1, (le + 1) * kp1)
        blk = np.einsum("eq,eqj,qi->eij", w, mu, tr)  # (ne, nk, kp1)
        for c in range(2):
            A5e[:, c * nk : (c + 1) * nk, tcols] += n[:, None, None, c] * blk
        A6e += tau_e[:, None, None] * np.einsum("eq,qj,qi->eij", w, tr, tr)
        A7e[:, :, tcols] += tau_e[:, None, None] * blk

    tdofs = elem_trace_dofs(mesh, layout)
    vdofs, wdofs, zdofs = _elem_dof_arrays(layout)

    sys.A1 = _block_diag_sparse(A1e, zdofs, zdofs)
    sys.A2 = _block_diag_sparse(A2e, zdofs, vdofs)
    sys.A3 = _block_diag_sparse(A3e, vdofs, vdofs)
    sys.A4 = _block_diag_sparse(A4e, vdofs, wdofs)
    sys.A9 = _block_diag_sparse(A9e, wdofs, zdofs)
    sys.M = _block_diag_sparse(Me, wdofs, wdofs)
    sys.A6 = _block_diag_sparse(A6e, wdofs, wdofs)
    sys.A5 = _scatter_trace(A5e, vdofs, tdofs, layout)
    sys.A7 = _scatter_trace(A7e, wdofs, tdofs, layout)
    sys.A8 = _assemble_a8(mesh, layout, tau_e, srule, eb)
    sys.b1 = b1e.reshape(-1)
    sys.b2 = b2e.reshape(-1)

    sys.A1e, sys.A2e, sys.A3e, sys.A4e = A1e, A2e, A3e, A4e
    sys.A5e, sys.A6e, sys.A7e = A5e, A6e, A7e
    sys.A9e, sys.Me, sys.b1e, sys.b2e = A9e, Me, b1e, b2e
    sys.elem_trace_dofs = tdofs
    return sys


def _scatter_trace(blocks, row_dofs, tdofs, layout: DofLayout):
    """Scatter (ne, r, 3*(k+1)) blocks into an (N, N4) sparse matrix,
    dropping inactive (-1) trace columns."""
    ne, r, c = blocks.shape
    rows = np.repeat(row_dofs, c, axis=1).reshape(ne, r, c)
    cols = np.tile(tdofs[:, None, :], (1, r, 1))
    keep = cols.ravel() >= 0
    A = sp.coo_matrix(
        (blocks.ravel()[keep], (rows.ravel()[keep], cols.ravel()[keep])),
        shape=(int(row_dofs.max()) + 1, layout.N4),
    ).tocsr()
    A.sum_duplicates()
    A.eliminate_zeros()
    return A


def _assemble_a8(mesh, layout: DofLayout, tau_e, srule, eb):
    """A8 = <tau psi_j, psi_i> over element boundaries: face-block
    diagonal, interior faces accumulating both adjacent taus."""
    kp1 = layout.k + 1
    mu = eb.eval(srule.points)  # face's own parametrization
    a = mesh.vertices[mesh.faces[:, 0]]
    b = mesh.vertices[mesh.faces[:, 1]]
    length = np.linalg.norm(b - a, axis=1)
    mass1d = np.einsum("q,qj,qi->ij", srule.weights, mu, mu)
    tau_sum = tau_e[mesh.face_elements[:, 0]] + np.where(
        mesh.face_boundary, 0.0, tau_e[mesh.face_elements[:, 1]]
    )
    active = layout.face_offset >= 0
    fdofs = layout.face_offset[active, None] + np.arange(kp1)[None, :]
    blocks = (tau_sum * length)[active, None, None] * mass1d[None, :, :]
    rows = np.repeat(fdofs, kp1, axis=1).reshape(-1, kp1, kp1)
    cols = np.tile(fdofs[:, None, :], (1, kp1, 1))
    A = sp.coo_matrix(
        (blocks.ravel(), (rows.ravel(), cols.ravel())), shape=(layout.N4, layout.N4)
    ).tocsr()
    A.sum_duplicates()
    return A


def build_postprocessing_blocks(sys: SystemMatrices):
    """Per-element saddle-point solve giving gamma = B11 alpha + B12 beta.

    On each element: [[A1, b1^T], [b1, 0]] [gamma; eta] = [[-A2, 0], [0, b2]]
    [alpha; beta]. The mean constraint (one Lagrange multiplier) pins the
    constant mode left free by the gradient equation. Stores dense
    element blocks and sparse B11 (N3 x N1), B12 (N3 x N2)."""
    counters["build_postprocessing_blocks"] += 1
    layout = sys.layout
    ne, nk, nk1 = layout.num_elements, layout.nk, layout.nk1
    S = np.zeros((ne, nk1 + 1, nk1 + 1))
    S[:, :nk1, :nk1] = sys.A1e
    S[:, :nk1, nk1] = sys.b1e
    S[:, nk1, :nk1] = sys.b1e
    rhs = np.zeros((ne, nk1 + 1, 2 * nk + nk))
    rhs[:, :nk1, : 2 * nk] = -sys.A2e
    rhs[:, nk1, 2 * nk :] = sys.b2e
    try:
        sol = np.linalg.solve(S, rhs)
    except np.linalg.LinAlgError as exc:
        bad = _first_singular_block(S)
        raise AssemblyError(
            f"singular postprocessing saddle point on element {bad}"
        ) from exc
    resid = np.abs(np.einsum("eij,ejk->eik", S, sol) - rhs).max()
    scale = max(np.abs(S).max(), 1.0)
    if resid > 1e-10 * scale:
        raise AssemblyError(f"postprocessing inversion residual {resid:.2e}")
    sys.B11e = sol[:, :nk1, : 2 * nk].copy()
    sys.B12e = sol[:, :nk1, 2 * nk :].copy()
    vdofs, wdofs, zdofs = _elem_dof_arrays(layout)
    sys.B11 = _block_diag_sparse(sys.B11e, zdofs, vdofs)
    sys.B12 = _block_diag_sparse(sys.B12e, zdofs, wdofs)
    return sys.B11, sys.B12


def _first_singular_block(S):
    for e in range(len(S)):
        if np.linalg.matrix_rank(S[e]) < S.shape[1]:
            return e
    return -1


def nonlinear_product(sys: SystemMatrices, F, gamma):
    """A9 applied to the pointwise nodal values F(gamma): the whole
    discrete nonlinear term, with no quadrature of F anywhere."""
    vals = F(np.asarray(gamma))
    if not np.all(np.isfinite(vals)):
        bad = int(np.flatnonzero(~np.isfinite(vals))[0])
        raise FloatingPointError(f"non-finite nonlinearity value at node {bad}")
    return sys.A9 @ vals


def jacobian_blocks(sys: SystemMatrices, Fprime, alpha, beta):
    """A10 = A9 diag(F'(gamma)) B11 and A11 = A9 diag(F'(gamma)) B12
    at the current iterate; both stay block-diagonal per element."""
    gamma = sys.B11 @ alpha + sys.B12 @ beta
    d = Fprime(gamma)
    if not np.all(np.isfinite(d)):
        bad = int(np.flatnonzero(~np.isfinite(d))[0])
        raise FloatingPointError(f"non-finite derivative value at node {bad}")
    D = sp.diags(d)
    A10 = (sys.A9 @ D @ sys.B11).tocsr()
    A11 = (sys.A9 @ D @ sys.B12).tocsr()
    return A10, A11


def source_vector(sys: SystemMatrices, f, t: float):
    """b3 at time t: moments of the source against the scalar basis,
    by quadrature at the error-norm exactness (the one per-step integral)."""
    k = sys.layout.k
    ref = felib.build_reference(k)
    rule = felib.triangle_quadrature(felib.error_exactness(k))
    phi = ref.eval(rule.points)
    x, y, w = _physical_quad(sys.mesh, rule)
    return np.einsum("eq,eq,qi->ei", w, f(t, x, y), phi).reshape(-1)


def dump_matrix(A, path):
    """Write a sparse matrix as `row col value` triplet lines."""
    coo = sp.coo_matrix(A)
    with open(path, "w", encoding="ascii") as fh:
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{int(r)} {int(c)} {float(v)!r}\n")
