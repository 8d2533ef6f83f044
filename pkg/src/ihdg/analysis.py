"""Error measurement and the convergence-rate harness."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import felib, mesh as meshmod, solver
from .projections import _physical_quad


def l2_error(coeffs, space: str, exact, t: float, mesh, k: int) -> float:
    """L2(Omega) distance between a discrete field and an exact one.

    space: "V" (vector flux, exact returns (qx, qy)), "W" (scalar,
    degree k), or "Z" (postprocessed scalar, degree k+1). Elementwise
    quadrature at exactness 2(k+1)+4; deterministic summation order.
    """
    rule = felib.triangle_quadrature(felib.error_exactness(k))
    x, y, w = _physical_quad(mesh, rule)
    ne = mesh.num_elements
    if space == "V":
        ref = felib.build_reference(k)
        phi = ref.eval(rule.points)
        nk = ref.num_nodes
        c = np.asarray(coeffs).reshape(ne, 2 * nk)
        qx = np.einsum("ei,qi->eq", c[:, :nk], phi)
        qy = np.einsum("ei,qi->eq", c[:, nk:], phi)
        ex, ey = exact(t, x, y)
        sq = (qx - ex) ** 2 + (qy - ey) ** 2
    elif space in ("W", "Z"):
        ref = felib.build_reference(k if space == "W" else k + 1)
        phi = ref.eval(rule.points)
        c = np.asarray(coeffs).reshape(ne, ref.num_nodes)
        vals = np.einsum("ei,qi->eq", c, phi)
        sq = (vals - exact(t, x, y)) ** 2
    else:
        raise ValueError(f"unknown space {space!r}")
    return math.sqrt(float(np.sum(np.sum(w * sq, axis=1))))


@dataclass
class ConvergenceTable:
    """Errors and observed orders over a refinement sequence. The level
    parameter is 1/n for the n-by-n structured mesh family."""

    k: int
    levels: list
    err_q: list
    err_u: list
    err_ustar: list

    @staticmethod
    def _rates(errors):
        out = [float("nan")]
        for coarse, fine in zip(errors, errors[1:]):
            if coarse > 0 and fine > 0:
                out.append(math.log2(coarse / fine))
            else:
                out.append(float("nan"))
        return out

    @property
    def rate_q(self):
        return self._rates(self.err_q)

    @property
    def rate_u(self):
        return self._rates(self.err_u)

    @property
    def rate_ustar(self):
        return self._rates(self.err_ustar)

    def format_text(self) -> str:
        head = (
            f"{'1/n':>8} {'err_q':>12} {'rate':>6} {'err_u':>12} {'rate':>6} "
            f"{'err_u*':>12} {'rate':>6}"
        )
        lines = [f"degree k = {self.k}", head]
        rq, ru, rs = self.rate_q, self.rate_u, self.rate_ustar
        for i, n in enumerate(self.levels):
            def fr(r):
                return "      " if math.isnan(r) else f"{r:6.2f}"

            lines.append(
                f"{1.0 / n:>8.4g} {self.err_q[i]:>12.4E} {fr(rq[i])} "
                f"{self.err_u[i]:>12.4E} {fr(ru[i])} "
                f"{self.err_ustar[i]:>12.4E} {fr(rs[i])}"
            )
        return "\n".join(lines)

    def to_csv(self) -> str:
        lines = ["level,err_q,rate_q,err_u,rate_u,err_ustar,rate_ustar"]
        rq, ru, rs = self.rate_q, self.rate_u, self.rate_ustar
        for i, n in enumerate(self.levels):
            lines.append(
                f"{1.0 / n!r},{self.err_q[i]!r},{rq[i]!r},"
                f"{self.err_u[i]!r},{ru[i]!r},{self.err_ustar[i]!r},{rs[i]!r}"
            )
        return "\n".join(lines) + "\n"


def dt_for_level(dt_rule: str, n: int, dt: float | None = None) -> float:
    """Time step per refinement level: 'h' -> 1/n, 'h2' -> 1/n^2,
    'fixed' -> the supplied dt."""
    if dt_rule == "h":
        return 1.0 / n
    if dt_rule == "h2":
        return 1.0 / n**2
    if dt_rule == "fixed":
        if dt is None:
            raise ValueError("fixed dt_rule requires dt")
        return dt
    raise ValueError(f"unknown dt rule {dt_rule!r}")


def run_convergence(
    problem,
    k: int,
    levels,
    scheme: str,
    dt_rule: str,
    t_final: float = 1.0,
    tau=1.0,
    dt: float | None = None,
    log=None,
) -> ConvergenceTable:
    """One solver run per level; errors at the final time."""
    if problem.exact is None:
        raise ValueError("convergence study needs a problem with an exact solution")
    table = ConvergenceTable(k=k, levels=list(levels), err_q=[], err_u=[], err_ustar=[])
    for n in levels:
        m = meshmod.generate_structured_square(n)
        cfg = solver.SolverConfig(
            dt=dt_for_level(dt_rule, n, dt), t_final=t_final, scheme=scheme
        )
        state, _, _ = solver.run(problem, m, k, cfg, tau=tau)
        table.err_q.append(l2_error(state.alpha[0], "V", problem.exact_flux[0], t_final, m, k))
        table.err_u.append(l2_error(state.beta[0], "W", problem.exact[0], t_final, m, k))
        table.err_ustar.append(
            l2_error(state.gamma[0], "Z", problem.exact[0], t_final, m, k)
        )
        if log is not None:
            log(
                f"level n={n}: err_q={table.err_q[-1]:.4E} "
                f"err_u={table.err_u[-1]:.4E} err_u*={table.err_ustar[-1]:.4E}"
            )
    return table
