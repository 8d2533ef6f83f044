"""Reference-element machinery.

Nodal Lagrange bases on the unit reference triangle {x,y >= 0, x+y <= 1}
and on the unit interval, quadrature rules, and global degree-of-freedom
layouts for the four discrete spaces (vector flux, scalar, postprocessing,
trace).

Lagrange coefficient matrices are computed once per degree with exact
rational arithmetic (the node lattices are rational), so basis identities
like partition of unity hold to rounding error regardless of degree.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

MAX_DEGREE = 4  # highest polynomial degree needed (k=3 postprocessing)


def _rational_inverse(A):
    """Exact inverse of a square matrix of Fractions (Gauss-Jordan)."""
    n = len(A)
    M = [row[:] + [Fraction(int(i == j)) for j in range(n)] for i, row in enumerate(A)]
    for col in range(n):
        piv = next((r for r in range(col, n) if M[r][col] != 0), None)
        if piv is None:
            raise ValueError("singular Vandermonde matrix")
        M[col], M[piv] = M[piv], M[col]
        inv = Fraction(1, 1) / M[col][col]
        M[col] = [v * inv for v in M[col]]
        for r in range(n):
            if r != col and M[r][col] != 0:
                f = M[r][col]
                M[r] = [a - f * b for a, b in zip(M[r], M[col])]
    return [row[n:] for row in M]


def _triangle_monomials(p):
    """Exponent pairs (i, j) with i + j <= p, graded order."""
    return [(i, d - i) for d in range(p + 1) for i in range(d + 1)]


def _triangle_nodes(p):
    """Uniform lattice nodes of P^p as exact Fractions; centroid for p=0."""
    if p == 0:
        return [(Fraction(1, 3), Fraction(1, 3))]
    return [
        (Fraction(i, p), Fraction(j, p))
        for d in range(p + 1)
        for j in range(d + 1)
        for i in [d - j]
        # enumerate by total i+j then j so vertex (0,0) comes first
    ]


class ReferenceElement:
    """Nodal Lagrange basis of degree p on the reference triangle."""

    def __init__(self, degree: int):
        if not 0 <= degree <= MAX_DEGREE:
            raise ValueError(f"unsupported degree {degree}")
        self.degree = degree
        nodes_frac = _triangle_nodes(degree)
        self.exponents = _triangle_monomials(degree)
        self.num_nodes = len(nodes_frac)
        assert self.num_nodes == len(self.exponents)

        V = [
            [x**i * y**j for (i, j) in self.exponents]
            for (x, y) in nodes_frac
        ]
        C = _rational_inverse(V)  # coeffs: basis_k = sum_m C[m][k] x^i y^j
        self.coeffs = np.array([[float(c) for c in row] for row in C])
        self.nodes = np.array([[float(x), float(y)] for (x, y) in nodes_frac])

        # nodes on each reference edge (edge le runs from vertex le to le+1)
        self.edge_nodes = []
        for le, on_edge in enumerate(
            [
                lambda x, y: y == 0,
                lambda x, y: x + y == 1,
                lambda x, y: x == 0,
            ]
        ):
            ids = [i for i, (x, y) in enumerate(nodes_frac) if on_edge(x, y)]
            self.edge_nodes.append(np.array(ids, dtype=np.int64))

    def _monomials(self, pts):
        x, y = pts[:, 0], pts[:, 1]
        return np.stack([x**i * y**j for (i, j) in self.exponents], axis=1)

    def eval(self, pts):
        """Basis values at reference points; shape (npts, num_nodes)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return self._monomials(pts) @ self.coeffs

    def grad(self, pts):
        """Basis gradients at reference points; shape (npts, num_nodes, 2)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        x, y = pts[:, 0], pts[:, 1]
        dx = np.stack(
            [i * x ** max(i - 1, 0) * y**j if i else np.zeros_like(x) for (i, j) in self.exponents],
            axis=1,
        )
        dy = np.stack(
            [j * x**i * y ** max(j - 1, 0) if j else np.zeros_like(x) for (i, j) in self.exponents],
            axis=1,
        )
        return np.stack([dx @ self.coeffs, dy @ self.coeffs], axis=2)


class EdgeBasis:
    """Nodal Lagrange basis of degree p on [0, 1] (midpoint node for p=0)."""

    def __init__(self, degree: int):
        if not 0 <= degree <= MAX_DEGREE:
            raise ValueError(f"unsupported degree {degree}")
        self.degree = degree
        if degree == 0:
            nodes = [Fraction(1, 2)]
        else:
            nodes = [Fraction(i, degree) for i in range(degree + 1)]
        self.num_nodes = len(nodes)
        V = [[s**m for m in range(self.num_nodes)] for s in nodes]
        C = _rational_inverse(V)
        self.coeffs = np.array([[float(c) for c in row] for row in C])
        self.nodes = np.array([float(s) for s in nodes])

    def eval(self, s):
        s = np.atleast_1d(np.asarray(s, dtype=float))
        V = np.stack([s**m for m in range(self.num_nodes)], axis=1)
        return V @ self.coeffs


@lru_cache(maxsize=None)
def build_reference(degree: int) -> ReferenceElement:
    return ReferenceElement(degree)


@lru_cache(maxsize=None)
def build_edge_basis(degree: int) -> EdgeBasis:
    return EdgeBasis(degree)


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (nq, 2) on the triangle, (nq,) on an edge
    weights: np.ndarray
    exactness: int


@lru_cache(maxsize=None)
def edge_quadrature(exactness: int) -> QuadratureRule:
    """Gauss-Legendre rule on [0, 1] exact for the given degree."""
    if not 0 <= exactness <= 40:
        raise ValueError(f"unsupported edge quadrature exactness {exactness}")
    n = exactness // 2 + 1
    x, w = np.polynomial.legendre.leggauss(n)
    pts = 0.5 * (x + 1.0)
    wts = 0.5 * w
    pts.setflags(write=False)
    wts.setflags(write=False)
    return QuadratureRule(pts, wts, exactness)


@lru_cache(maxsize=None)
def triangle_quadrature(exactness: int) -> QuadratureRule:
    """Rule on the reference triangle exact for the given total degree.

    Built as a collapsed (Duffy) Gauss-Legendre product: with
    x = a (1 - b), y = b the integrand of degree p maps to degree <= p
    in a and <= p + 1 in b (the Jacobian contributes the extra power),
    so an n-point rule per direction with 2n - 1 >= p + 1 is exact.
    """
    if not 0 <= exactness <= 20:
        raise ValueError(f"unsupported triangle quadrature exactness {exactness}")
    n = (exactness + 1) // 2 + 1
    x, w = np.polynomial.legendre.leggauss(n)
    a = 0.5 * (x + 1.0)
    wa = 0.5 * w
    A, B = np.meshgrid(a, a, indexing="ij")
    WA, WB = np.meshgrid(wa, wa, indexing="ij")
    pts = np.column_stack([(A * (1.0 - B)).ravel(), B.ravel()])
    wts = (WA * WB * (1.0 - B)).ravel()
    pts.setflags(write=False)
    wts.setflags(write=False)
    return QuadratureRule(pts, wts, exactness)


def volume_exactness(k: int) -> int:
    """Default volumetric rule degree: exact for every assembled form."""
    return 2 * (k + 1) + 2


def edge_exactness(k: int) -> int:
    return 2 * k + 2


def error_exactness(k: int) -> int:
    """Rule degree for error norms against smooth exact solutions."""
    return 2 * (k + 1) + 4


def _dim_pk(k: int) -> int:
    return (k + 1) * (k + 2) // 2


@dataclass(frozen=True)
class DofLayout:
    """Global numbering for the four discrete spaces.

    Flux dofs per element are component-major: the 2*nk entries of
    element e are [q_x at nodes, q_y at nodes]. Trace dofs of face f
    start at face_offset[f] (-1 for faces excluded under Dirichlet).
    """

    k: int
    bc: str  # "dirichlet" | "neumann"
    num_elements: int
    nk: int  # dim P^k
    nk1: int  # dim P^{k+1}
    N1: int
    N2: int
    N3: int
    N4: int
    face_offset: np.ndarray  # (nf,)

    def flux_dofs(self, e: int) -> slice:
        return slice(2 * self.nk * e, 2 * self.nk * (e + 1))

    def scalar_dofs(self, e: int) -> slice:
        return slice(self.nk * e, self.nk * (e + 1))

    def post_dofs(self, e: int) -> slice:
        return slice(self.nk1 * e, self.nk1 * (e + 1))

    def face_dofs(self, f: int) -> np.ndarray:
        off = self.face_offset[f]
        if off < 0:
            return np.empty(0, dtype=np.int64)
        return off + np.arange(self.k + 1, dtype=np.int64)


def build_dof_layout(mesh, k: int, bc: str) -> DofLayout:
    if bc not in ("dirichlet", "neumann"):
        raise ValueError(f"unknown boundary condition type {bc!r}")
    if not 0 <= k <= MAX_DEGREE - 1:
        raise ValueError(f"unsupported degree {k}")
    nk = _dim_pk(k)
    nk1 = _dim_pk(k + 1)
    ne = mesh.num_elements
    active = np.ones(mesh.num_faces, dtype=bool)
    if bc == "dirichlet":
        active = ~mesh.face_boundary
    face_offset = np.full(mesh.num_faces, -1, dtype=np.int64)
    face_offset[active] = (k + 1) * np.arange(int(active.sum()), dtype=np.int64)
    return DofLayout(
        k=k,
        bc=bc,
        num_elements=ne,
        nk=nk,
        nk1=nk1,
        N1=2 * nk * ne,
        N2=nk * ne,
        N3=nk1 * ne,
        N4=(k + 1) * int(active.sum()),
        face_offset=face_offset,
    )
