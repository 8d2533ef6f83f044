"""Time integration of the discrete system.

Backward Euler and Crank-Nicolson stepping with Newton's method on the
stacked (flux, scalar, trace) unknowns. The Newton linear systems are
solved either by element-local static condensation onto the trace
unknowns (default) or by a monolithic dense solve (oracle / debugging).

Coupled systems (several reaction-diffusion fields on the same mesh and
degree) are handled by stacking per-field unknowns; the fields couple
only through the pointwise reaction Jacobian at the shared postprocessing
nodes, so the extra Jacobian blocks stay element-local and condensation
goes through unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import assembly, felib, projections


class NewtonError(RuntimeError):
    """Newton iteration failed to converge; carries the final residual."""

    def __init__(self, message, residual_norm=None, iterations=None):
        super().__init__(message)
        self.residual_norm = residual_norm
        self.iterations = iterations


@dataclass
class SolverConfig:
    dt: float
    t_final: float
    scheme: str = "backward_euler"  # or "crank_nicolson"
    newton_tol: float = 1e-10  # scaled by sqrt(#dofs)
    newton_max: int = 25
    linear_solver: str = "condensed"  # or "dense"

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.t_final < self.dt:
            raise ValueError("t_final must be at least dt")
        if self.scheme not in ("backward_euler", "crank_nicolson"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.newton_tol <= 0:
            raise ValueError("newton_tol must be positive")
        if self.linear_solver not in ("condensed", "dense"):
            raise ValueError(f"unknown linear solver {self.linear_solver!r}")

    @property
    def theta(self) -> float:
        return 1.0 if self.scheme == "backward_euler" else 0.5


@dataclass
class State:
    """Coefficients at one time level, one row per field."""

    t: float
    alpha: np.ndarray  # (nfields, N1)
    beta: np.ndarray  # (nfields, N2)
    zeta: np.ndarray  # (nfields, N4)
    gamma: np.ndarray  # (nfields, N3), always B11 alpha / D + B12 beta


class DiscreteSystem:
    """A problem discretized on a mesh: layout, assembled matrices,
    postprocessing blocks, and the index arrays used for condensation.

    The flux equation is scaled per field by 1/D (flux q = -D grad u),
    which is the only place the diffusion coefficient enters.
    """

    def __init__(self, problem, mesh, k: int, tau=1.0):
        self.problem = problem
        self.mesh = mesh
        self.k = k
        self.layout = felib.build_dof_layout(mesh, k, problem.bc)
        self.base = assembly.assemble_system(mesh, self.layout, tau)
        assembly.build_postprocessing_blocks(self.base)
        self.nfields = problem.nfields
        self.diffusion = np.asarray(problem.diffusion, dtype=float)
        lay = self.layout
        self.block_sizes = (lay.N1, lay.N2, lay.N4)
        self.field_size = lay.N1 + lay.N2 + lay.N4
        self.num_dofs = self.nfields * self.field_size
        self._build_condensation_indices()
        self._workspace = None

    # -- packing ---------------------------------------------------------

    def pack(self, state: State) -> np.ndarray:
        parts = []
        for f in range(self.nfields):
            parts.extend([state.alpha[f], state.beta[f], state.zeta[f]])
        return np.concatenate(parts)

    def unpack(self, x):
        N1, N2, N4 = self.block_sizes
        alpha = np.empty((self.nfields, N1))
        beta = np.empty((self.nfields, N2))
        zeta = np.empty((self.nfields, N4))
        for f in range(self.nfields):
            off = f * self.field_size
            alpha[f] = x[off : off + N1]
            beta[f] = x[off + N1 : off + N1 + N2]
            zeta[f] = x[off + N1 + N2 : off + self.field_size]
        return alpha, beta, zeta

    def postprocess(self, alpha, beta):
        """gamma per field from the once-built local blocks."""
        gamma = np.empty((self.nfields, self.layout.N3))
        for f in range(self.nfields):
            gamma[f] = (self.base.B11 @ alpha[f]) / self.diffusion[f] + self.base.B12 @ beta[f]
        return gamma

    def make_state(self, t, alpha, beta, zeta) -> State:
        return State(t, alpha, beta, zeta, self.postprocess(alpha, beta))

    def reaction_values(self, gamma):
        """(nfields, N3) reaction values at the postprocessing nodes."""
        args = [gamma[g] for g in range(self.nfields)]
        return np.stack([self.problem.reaction[f](*args) for f in range(self.nfields)])

    def reaction_jacobian(self, gamma):
        """(nfields, nfields, N3) pointwise reaction derivatives."""
        args = [gamma[g] for g in range(self.nfields)]
        out = np.zeros((self.nfields, self.nfields, self.layout.N3))
        for f in range(self.nfields):
            for g in range(self.nfields):
                out[f, g] = self.problem.reaction_jac[f][g](*args)
        return out

    # -- condensation machinery -------------------------------------------

    def _build_condensation_indices(self):
        lay, mesh = self.layout, self.mesh
        ne, nk, kp1 = lay.num_elements, lay.nk, lay.k + 1
        nf = self.nfields
        nloc1 = 3 * nk  # alpha + beta dofs of one field on one element
        self.nloc = nf * nloc1
        self.ntl = nf * 3 * kp1

        tdofs = self.base.elem_trace_dofs  # (ne, 3*kp1), -1 inactive
        loc = np.empty((ne, self.nloc), dtype=np.int64)
        trg = np.full((ne, self.ntl), -1, dtype=np.int64)  # into stacked x
        trs = np.full((ne, self.ntl), -1, dtype=np.int64)  # into trace-only vec
        e_ar = np.arange(ne, dtype=np.int64)[:, None]
        for f in range(nf):
            off = f * self.field_size
            cols = slice(f * nloc1, f * nloc1 + 2 * nk)
            loc[:, cols] = off + 2 * nk * e_ar + np.arange(2 * nk)
            cols = slice(f * nloc1 + 2 * nk, (f + 1) * nloc1)
            loc[:, cols] = off + lay.N1 + nk * e_ar + np.arange(nk)
            tcols = slice(f * 3 * kp1, (f + 1) * 3 * kp1)
            act = tdofs >= 0
            trg_f = np.where(act, off + lay.N1 + lay.N2 + tdofs, -1)
            trs_f = np.where(act, f * lay.N4 + tdofs, -1)
            trg[:, tcols] = trg_f
            trs[:, tcols] = trs_f
        self.loc_gidx = loc
        self.trace_gidx = trg
        self.trace_sidx = trs

    def workspace(self, dt: float, theta: float):
        if self._workspace is None or self._workspace.key != (dt, theta):
            self._workspace = _CondensedWorkspace(self, dt, theta)
        return self._workspace


class _CondensedWorkspace:
    """Per-(dt, theta) static pieces of the condensed Newton solve."""

    def __init__(self, dsys: DiscreteSystem, dt: float, theta: float):
        self.key = (dt, theta)
        self.dsys = dsys
        b = dsys.base
        lay = dsys.layout
        ne, nk, kp1 = lay.num_elements, lay.nk, lay.k + 1
        nf = dsys.nfields
        nloc1, ntl1 = 3 * nk, 3 * kp1

        A = np.zeros((ne, dsys.nloc, dsys.nloc))
        B = np.zeros((ne, dsys.nloc, dsys.ntl))
        C = np.zeros((ne, dsys.ntl, dsys.nloc))
        A4T = b.A4e.transpose(0, 2, 1)
        A5T = b.A5e.transpose(0, 2, 1)
        A7T = b.A7e.transpose(0, 2, 1)
        for f in range(nf):
            ra = slice(f * nloc1, f * nloc1 + 2 * nk)
            rb = slice(f * nloc1 + 2 * nk, (f + 1) * nloc1)
            rt = slice(f * ntl1, (f + 1) * ntl1)
            A[:, ra, ra] = b.A3e / dsys.diffusion[f]
            A[:, ra, rb] = -b.A4e
            A[:, rb, ra] = theta * A4T
            A[:, rb, rb] = b.Me / dt + theta * b.A6e
            B[:, ra, rt] = b.A5e
            B[:, rb, rt] = -theta * b.A7e
            C[:, rt, ra] = A5T
            C[:, rt, rb] = A7T
        self.A_static, self.B_loc, self.C_loc = A, B, C
        self.S_static = sp.block_diag([-b.A8] * nf, format="csr")

        # COO scatter pattern for the Schur complement contributions
        trs = dsys.trace_sidx
        rows = np.repeat(trs, dsys.ntl, axis=1).reshape(ne, dsys.ntl, dsys.ntl)
        cols = np.tile(trs[:, None, :], (1, dsys.ntl, 1))
        self._mask = (rows >= 0) & (cols >= 0)
        self._rows = rows[self._mask]
        self._cols = cols[self._mask]
        self._vec_mask = trs >= 0
        self._vec_idx = trs[self._vec_mask]

    def dynamic_local(self, fprime_vals, theta):
        """Static local blocks plus the reaction Jacobian contribution."""
        dsys = self.dsys
        b = dsys.base
        lay = dsys.layout
        nk, nk1 = lay.nk, lay.nk1
        nloc1 = 3 * nk
        A = self.A_static.copy()
        for f in range(dsys.nfields):
            rb = slice(f * nloc1 + 2 * nk, (f + 1) * nloc1)
            for g in range(dsys.nfields):
                w = theta * fprime_vals[f, g].reshape(-1, nk1)
                ca = slice(g * nloc1, g * nloc1 + 2 * nk)
                cb = slice(g * nloc1 + 2 * nk, (g + 1) * nloc1)
                A[:, rb, ca] += np.einsum(
                    "eij,ej,ejk->eik", b.A9e, w, b.B11e
                ) / dsys.diffusion[g]
                A[:, rb, cb] += np.einsum("eij,ej,ejk->eik", b.A9e, w, b.B12e)
        return A

    def solve(self, fprime_vals, theta, rhs):
        """Solve the Newton system J dx = rhs by local elimination of the
        element unknowns and a sparse direct solve on the trace system."""
        dsys = self.dsys
        ne = dsys.layout.num_elements
        nf = dsys.nfields
        N4 = dsys.layout.N4

        A = self.dynamic_local(fprime_vals, theta)
        ry = rhs[dsys.loc_gidx]  # (ne, nloc)
        rz = np.concatenate(
            [
                rhs[
                    f * dsys.field_size
                    + dsys.block_sizes[0]
                    + dsys.block_sizes[1] : (f + 1) * dsys.field_size
                ]
                for f in range(nf)
            ]
        )

        try:
            AinvB = np.linalg.solve(A, self.B_loc)
            Ainv_ry = np.linalg.solve(A, ry[..., None])[..., 0]
        except np.linalg.LinAlgError as exc:
            bad = assembly._first_singular_block(A)
            raise NewtonError(f"singular local block on element {bad}") from exc

        CAinvB = np.einsum("eij,ejk->eik", self.C_loc, AinvB)
        CAinv_ry = np.einsum("eij,ej->ei", self.C_loc, Ainv_ry)

        S = self.S_static - sp.coo_matrix(
            (CAinvB[self._mask], (self._rows, self._cols)),
            shape=(nf * N4, nf * N4),
        ).tocsr()
        rz_mod = rz.copy()
        np.subtract.at(rz_mod, self._vec_idx, CAinv_ry[self._vec_mask])

        try:
            z = spla.splu(S.tocsc()).solve(rz_mod)
        except RuntimeError as exc:
            raise NewtonError("singular condensed trace system") from exc

        z_loc = np.where(dsys.trace_sidx >= 0, z[dsys.trace_sidx], 0.0)
        y = Ainv_ry - np.einsum("eij,ej->ei", AinvB, z_loc)

        dx = np.zeros_like(rhs)
        dx[dsys.loc_gidx.ravel()] = y.ravel()
        for f in range(nf):
            off = f * dsys.field_size + dsys.block_sizes[0] + dsys.block_sizes[1]
            dx[off : off + N4] = z[f * N4 : (f + 1) * N4]
        return dx


# -- residual and Jacobian -------------------------------------------------


def residual(x, dsys: DiscreteSystem, rhs_mid, dt: float, theta: float = 1.0):
    """G(x): block residual of one implicit step.

    rhs_mid is the per-field middle-row right-hand side carrying the
    source, the mass-matrix history term, and (for Crank-Nicolson) the
    spatial operator at the previous time level; see step_rhs.
    """
    b = dsys.base
    alpha, beta, zeta = dsys.unpack(x)
    gamma = dsys.postprocess(alpha, beta)
    Fvals = dsys.reaction_values(gamma)
    if not np.all(np.isfinite(Fvals)):
        raise FloatingPointError("non-finite reaction value in residual")
    out = np.empty_like(x)
    for f in range(dsys.nfields):
        r1 = b.A3 @ alpha[f] / dsys.diffusion[f] - b.A4 @ beta[f] + b.A5 @ zeta[f]
        r2 = (
            (b.M @ beta[f]) / dt
            + theta
            * (b.A4.T @ alpha[f] + b.A6 @ beta[f] - b.A7 @ zeta[f] + b.A9 @ Fvals[f])
            - rhs_mid[f]
        )
        r3 = b.A5.T @ alpha[f] + b.A7.T @ beta[f] - b.A8 @ zeta[f]
        off = f * dsys.field_size
        N1, N2, N4 = dsys.block_sizes
        out[off : off + N1] = r1
        out[off + N1 : off + N1 + N2] = r2
        out[off + N1 + N2 : off + N1 + N2 + N4] = r3
    return out


def step_rhs(dsys: DiscreteSystem, prev: State, t_n: float, dt: float, theta: float):
    """Constant-in-iteration middle-row right-hand side for the step to
    t_n. theta = 1 is backward Euler; theta = 1/2 is Crank-Nicolson with
    the flux and trace equations enforced at t_n."""
    b = dsys.base
    rhs = np.empty((dsys.nfields, dsys.layout.N2))
    Fprev = dsys.reaction_values(prev.gamma) if theta != 1.0 else None
    for f in range(dsys.nfields):
        src = dsys.problem.source[f]
        b3 = np.zeros(dsys.layout.N2)
        if src is not None:
            b3 = theta * assembly.source_vector(b, src, t_n)
            if theta != 1.0:
                b3 += (1.0 - theta) * assembly.source_vector(b, src, prev.t)
        rhs[f] = b3 + (b.M @ prev.beta[f]) / dt
        if theta != 1.0:
            rhs[f] -= (1.0 - theta) * (
                b.A4.T @ prev.alpha[f]
                + b.A6 @ prev.beta[f]
                - b.A7 @ prev.zeta[f]
                + b.A9 @ Fprev[f]
            )
    return rhs


def monolithic_jacobian(dsys: DiscreteSystem, fprime_vals, dt: float, theta: float):
    """Full sparse Newton matrix (no condensation); the oracle path."""
    b = dsys.base
    nf = dsys.nfields
    blocks = [[None] * (3 * nf) for _ in range(3 * nf)]
    for f in range(nf):
        i = 3 * f
        blocks[i][i] = b.A3 / dsys.diffusion[f]
        blocks[i][i + 1] = -b.A4
        blocks[i][i + 2] = b.A5
        blocks[i + 1][i] = theta * b.A4.T
        blocks[i + 1][i + 1] = b.M / dt + theta * b.A6
        blocks[i + 1][i + 2] = -theta * b.A7
        blocks[i + 2][i] = b.A5.T
        blocks[i + 2][i + 1] = b.A7.T
        blocks[i + 2][i + 2] = -b.A8
        for g in range(nf):
            D = sp.diags(theta * fprime_vals[f, g])
            A10 = b.A9 @ D @ b.B11 / dsys.diffusion[g]
            A11 = b.A9 @ D @ b.B12
            blocks[3 * f + 1][3 * g] = (
                A10 if blocks[3 * f + 1][3 * g] is None else blocks[3 * f + 1][3 * g] + A10
            )
            blocks[3 * f + 1][3 * g + 1] = (
                A11
                if blocks[3 * f + 1][3 * g + 1] is None
                else blocks[3 * f + 1][3 * g + 1] + A11
            )
    return sp.bmat(blocks, format="csr")


def condensed_solve(dsys: DiscreteSystem, fprime_vals, dt: float, theta: float, rhs):
    """Solve (K_theta + theta * reaction Jacobian) dx = rhs by static
    condensation; agrees with the monolithic solve to solver precision."""
    return dsys.workspace(dt, theta).solve(fprime_vals, theta, rhs)


def newton_solve(x0, dsys: DiscreteSystem, rhs_mid, dt, cfg: SolverConfig, theta=None):
    """Newton iteration for one implicit step. Returns (x, info) where
    info has the iteration count and residual-norm history."""
    if theta is None:
        theta = cfg.theta
    x = np.array(x0, dtype=float)
    tol = cfg.newton_tol * math.sqrt(x.size)
    history = []
    for m in range(cfg.newton_max + 1):
        G = residual(x, dsys, rhs_mid, dt, theta)
        nrm = float(np.linalg.norm(G))
        history.append(nrm)
        if nrm <= tol:
            return x, {"iterations": m, "residual_norms": history}
        if m == cfg.newton_max:
            raise NewtonError(
                f"Newton failed to converge in {cfg.newton_max} iterations "
                f"(residual {nrm:.3e}, tolerance {tol:.3e})",
                residual_norm=nrm,
                iterations=m,
            )
        alpha, beta, _ = dsys.unpack(x)
        fprime = dsys.reaction_jacobian(dsys.postprocess(alpha, beta))
        if not np.all(np.isfinite(fprime)):
            raise FloatingPointError("non-finite reaction derivative")
        if cfg.linear_solver == "dense":
            J = monolithic_jacobian(dsys, fprime, dt, theta).toarray()
            dx = np.linalg.solve(J, -G)
        else:
            dx = condensed_solve(dsys, fprime, dt, theta, -G)
        x = x + dx
    raise AssertionError("unreachable")


# -- stepping ---------------------------------------------------------------


def initial_state(dsys: DiscreteSystem) -> State:
    """Project the initial data and recover consistent flux and trace
    coefficients from the (linear) flux and trace equations."""
    problem = dsys.problem
    lay = dsys.layout
    beta = np.empty((dsys.nfields, lay.N2))
    for f in range(dsys.nfields):
        if problem.initial_projection == "hdg":
            qf = problem.exact_flux[f]
            uf = problem.exact[f]
            _, beta[f] = projections.hdg_project(
                lambda x, y: qf(0.0, x, y),
                lambda x, y: uf(0.0, x, y),
                dsys.mesh,
                dsys.k,
                dsys.base.tau,
            )
        else:
            beta[f] = projections.l2_project_element(
                problem.initial[f], dsys.mesh, dsys.k
            )

    b = dsys.base
    alpha = np.empty((dsys.nfields, lay.N1))
    zeta = np.empty((dsys.nfields, lay.N4))
    for f in range(dsys.nfields):
        K = sp.bmat(
            [[b.A3 / dsys.diffusion[f], b.A5], [b.A5.T, -b.A8]], format="csc"
        )
        rhs = np.concatenate([b.A4 @ beta[f], -b.A7.T @ beta[f]])
        sol = spla.spsolve(K, rhs)
        alpha[f] = sol[: lay.N1]
        zeta[f] = sol[lay.N1 :]
    return dsys.make_state(0.0, alpha, beta, zeta)


def step(state: State, dsys: DiscreteSystem, cfg: SolverConfig, dt=None):
    """Advance one implicit step; warm-starts Newton from the previous
    level. Returns (new_state, info)."""
    if dt is None:
        dt = cfg.dt
    theta = cfg.theta
    t_n = state.t + dt
    rhs_mid = step_rhs(dsys, state, t_n, dt, theta)
    x0 = dsys.pack(state)
    x, info = newton_solve(x0, dsys, rhs_mid, dt, cfg, theta)
    alpha, beta, zeta = dsys.unpack(x)
    return dsys.make_state(t_n, alpha, beta, zeta), info


def time_steps(dt: float, t_final: float):
    """Step sizes covering (0, t_final]; the last step is shortened so
    the final time is hit exactly."""
    n_full = int(math.floor(t_final / dt + 1e-9))
    steps = [dt] * n_full
    rest = t_final - n_full * dt
    if rest > 1e-12 * max(t_final, 1.0):
        steps.append(rest)
    return steps


def run(problem, mesh, k: int, cfg: SolverConfig, tau=1.0, snapshot_times=(), log=None):
    """Full simulation. Assembles once, steps to t_final, and returns
    (final_state, snapshots, dsys) where snapshots maps each requested
    time to the state at the nearest completed step."""
    dsys = DiscreteSystem(problem, mesh, k, tau)
    state = initial_state(dsys)
    snaps = {t: state for t in snapshot_times}
    for n, dt in enumerate(time_steps(cfg.dt, cfg.t_final), start=1):
        new_state, info = step(state, dsys, cfg, dt)
        if log is not None:
            h = info["residual_norms"]
            log(
                f"step {n} {new_state.t:.6g} {h[0]:.6e} {h[-1]:.6e} "
                f"{info['iterations']}"
            )
        state = new_state
        for ts in snapshot_times:
            if abs(state.t - ts) < abs(snaps[ts].t - ts):
                snaps[ts] = state
    return state, snaps, dsys
