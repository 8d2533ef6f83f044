"""Projection and interpolation operators into the discrete spaces.

Field functions are plain callables f(x, y) acting on coordinate arrays;
time-dependent data is bound by the caller. Vector fields are callables
returning a pair (fx, fy) of arrays.
"""

from __future__ import annotations

import numpy as np

from . import felib


class ProjectionError(RuntimeError):
    """Singular local projection system."""


def _physical_quad(mesh, rule):
    """Map a reference triangle rule to all elements.

    Returns (x, y, w) with shapes (ne, nq); w includes |det B|.
    """
    B, x0, detB = mesh.element_maps()
    xy = np.einsum("eij,qj->eqi", B, rule.points) + x0[:, None, :]
    w = detB[:, None] * rule.weights[None, :]
    return xy[..., 0], xy[..., 1], w


def _edge_geometry(mesh, le, srule):
    """Physical points, weights, and outward normals of local edge le.

    Edge le of an element runs from local vertex le to le+1. Returns
    (x, y, w, n) with x, y, w of shape (ne, nq) and n of shape (ne, 2);
    w includes the edge length.
    """
    p = mesh.vertices[mesh.elements]
    a = p[:, le, :]
    b = p[:, (le + 1) % 3, :]
    d = b - a
    length = np.linalg.norm(d, axis=1)
    xy = a[:, None, :] + srule.points[None, :, None] * d[:, None, :]
    w = length[:, None] * srule.weights[None, :]
    n = np.column_stack([d[:, 1], -d[:, 0]]) / length[:, None]
    return xy[..., 0], xy[..., 1], w, n


def hdg_project(q, u, mesh, k: int, tau=1.0):
    """HDG projection of (q, u) into V_h x W_h.

    Defined element by element: volume moments of the flux against
    [P^{k-1}]^2 and of the scalar against P^{k-1} are preserved, and on
    every face the moments of projected_q . n + tau * projected_u against
    P^k match those of the data. Returns (alpha, beta) coefficient
    vectors. tau may be a scalar or a per-element array.
    """
    ref = felib.build_reference(k)
    nk = ref.num_nodes
    ne = mesh.num_elements
    tau_e = np.broadcast_to(np.asarray(tau, dtype=float), (ne,))
    if np.any(tau_e <= 0):
        # constant-per-element tau: the Lemma hypothesis max tau|dK > 0
        # reduces to tau > 0
        raise ValueError("tau must be positive on every element")

    rule = felib.triangle_quadrature(felib.error_exactness(k))
    srule = felib.edge_quadrature(felib.error_exactness(k))
    nrows = 3 * nk
    A = np.zeros((ne, nrows, nrows))
    rhs = np.zeros((ne, nrows))

    # volume moment rows
    if k >= 1:
        refm = felib.build_reference(k - 1)
        nkm = refm.num_nodes
        phi = ref.eval(rule.points)  # (nq, nk)
        psi = refm.eval(rule.points)  # (nq, nkm)
        x, y, w = _physical_quad(mesh, rule)
        mass = np.einsum("eq,qi,qj->eij", w, psi, phi)  # (ne, nkm, nk)
        for c in range(2):
            A[:, c * nkm : (c + 1) * nkm, c * nk : (c + 1) * nk] = mass
        A[:, 2 * nkm : 3 * nkm, 2 * nk : 3 * nk] = mass
        qx, qy = q(x, y)
        rhs[:, 0:nkm] = np.einsum("eq,eq,qi->ei", w, qx, psi)
        rhs[:, nkm : 2 * nkm] = np.einsum("eq,eq,qi->ei", w, qy, psi)
        rhs[:, 2 * nkm : 3 * nkm] = np.einsum("eq,eq,qi->ei", w, u(x, y), psi)
        row0 = 3 * nkm
    else:
        row0 = 0

    # face moment rows
    eb = felib.build_edge_basis(k)
    mu = eb.eval(srule.points)  # (nq, k+1)
    for le in range(3):
        x, y, w, n = _edge_geometry(mesh, le, srule)
        ref_pts = _edge_ref_points(le, srule.points)
        tr = ref.eval(ref_pts)  # (nq, nk)
        r0 = row0 + le * (k + 1)
        # flux columns: (mu_i, trace_j * n_c)
        blk = np.einsum("eq,qi,qj->eij", w, mu, tr)  # (ne, k+1, nk)
        A[:, r0 : r0 + k + 1, 0:nk] += n[:, None, None, 0] * blk
        A[:, r0 : r0 + k + 1, nk : 2 * nk] += n[:, None, None, 1] * blk
        A[:, r0 : r0 + k + 1, 2 * nk : 3 * nk] += tau_e[:, None, None] * blk
        qx, qy = q(x, y)
        qn = n[:, None, 0] * qx + n[:, None, 1] * qy
        rhs[:, r0 : r0 + k + 1] += np.einsum(
            "eq,eq,qi->ei", w, qn + tau_e[:, None] * u(x, y), mu
        )

    try:
        sol = np.linalg.solve(A, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        bad = _first_singular(A)
        raise ProjectionError(f"singular HDG projection system on element {bad}") from exc
    alpha = sol[:, : 2 * nk].reshape(-1)
    beta = sol[:, 2 * nk :].reshape(-1)
    return alpha, beta


def _first_singular(A):
    for e in range(len(A)):
        if np.linalg.matrix_rank(A[e]) < A.shape[1]:
            return e
    return -1


def _edge_ref_points(le, s):
    """Reference coordinates along local edge le for parameters s."""
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    a, b = verts[le], verts[(le + 1) % 3]
    return a[None, :] + s[:, None] * (b - a)[None, :]


def l2_project_element(f, mesh, degree: int):
    """Elementwise L^2 projection into piecewise P^degree (nodal coeffs)."""
    ref = felib.build_reference(degree)
    rule = felib.triangle_quadrature(felib.error_exactness(degree))
    phi = ref.eval(rule.points)
    x, y, w = _physical_quad(mesh, rule)
    mass = np.einsum("eq,qi,qj->eij", w, phi, phi)
    rhs = np.einsum("eq,eq,qi->ei", w, f(x, y), phi)
    return np.linalg.solve(mass, rhs[..., None])[..., 0].reshape(-1)


def l2_project_face(f, mesh, k: int):
    """Facewise L^2 projection into P^k per face.

    Coefficients are nodal in each face's own parametrization (from its
    first stored vertex to its second). Returns an (nf, k+1) array.
    """
    eb = felib.build_edge_basis(k)
    srule = felib.edge_quadrature(felib.error_exactness(k))
    a = mesh.vertices[mesh.faces[:, 0]]
    b = mesh.vertices[mesh.faces[:, 1]]
    d = b - a
    length = np.linalg.norm(d, axis=1)
    xy = a[:, None, :] + srule.points[None, :, None] * d[:, None, :]
    w = length[:, None] * srule.weights[None, :]
    mu = eb.eval(srule.points)
    mass = np.einsum("fq,qi,qj->fij", w, mu, mu)
    rhs = np.einsum("fq,fq,qi->fi", w, f(xy[..., 0], xy[..., 1]), mu)
    return np.linalg.solve(mass, rhs[..., None])[..., 0]


def interpolate_Ih(f, mesh, k: int):
    """Elementwise interpolation into the postprocessing space: exact
    nodal values at every P^{k+1} lattice node of every element."""
    refz = felib.build_reference(k + 1)
    B, x0, _ = mesh.element_maps()
    xy = np.einsum("eij,nj->eni", B, refz.nodes) + x0[:, None, :]
    return f(xy[..., 0], xy[..., 1]).reshape(-1)


def element_nodes(mesh, degree: int):
    """Physical coordinates of the degree-p lattice nodes, (ne, nn, 2)."""
    ref = felib.build_reference(degree)
    B, x0, _ = mesh.element_maps()
    return np.einsum("eij,nj->eni", B, ref.nodes) + x0[:, None, :]
