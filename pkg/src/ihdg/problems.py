"""Concrete problem definitions.

The solver sees every problem in the form

    u_t - D * Laplace(u) + F(u) = f,

so reaction terms written with the opposite sign in the modelling
literature are negated here. All callables are pure and act on
coordinate arrays.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np


@dataclass(frozen=True)
class ProblemSpec:
    """A (possibly coupled) semilinear reaction-diffusion problem.

    reaction[i] and reaction_jac[i][j] take one array per field (values
    at shared postprocessing nodes) and return an array: F_i(u_1, ..)
    and dF_i/du_j. source[i] is f_i(t, x, y) or None for zero. exact
    and exact_flux, when present, are u_i(t, x, y) and q_i(t, x, y)
    returning (q_x, q_y), with q = -D grad u.
    """

    name: str
    nfields: int
    diffusion: tuple
    reaction: tuple
    reaction_jac: tuple
    source: tuple
    initial: tuple
    bc: str  # "dirichlet" | "neumann"
    exact: Optional[tuple] = None
    exact_flux: Optional[tuple] = None
    initial_projection: str = "l2"  # "hdg" | "l2"


def allen_cahn() -> ProblemSpec:
    """Allen-Cahn benchmark on the unit square with homogeneous
    Dirichlet data and manufactured solution sin(t) sin(pi x) sin(pi y)."""

    def u(t, x, y):
        return np.sin(t) * np.sin(np.pi * x) * np.sin(np.pi * y)

    def q(t, x, y):
        # q = -grad u
        return (
            -np.pi * np.sin(t) * np.cos(np.pi * x) * np.sin(np.pi * y),
            -np.pi * np.sin(t) * np.sin(np.pi * x) * np.cos(np.pi * y),
        )

    def f(t, x, y):
        s = np.sin(np.pi * x) * np.sin(np.pi * y)
        uu = np.sin(t) * s
        return np.cos(t) * s + 2.0 * np.pi**2 * uu + uu**3 - uu

    return ProblemSpec(
        name="allen_cahn",
        nfields=1,
        diffusion=(1.0,),
        reaction=(lambda v: v**3 - v,),
        reaction_jac=((lambda v: 3.0 * v**2 - 1.0,),),
        source=(f,),
        initial=(lambda x, y: np.zeros_like(x),),
        bc="dirichlet",
        exact=(u,),
        exact_flux=(q,),
        initial_projection="hdg",
    )


def heat(exact=None, exact_flux=None, source=None, initial=None, bc="dirichlet"):
    """Linear heat equation (zero reaction); used for oracle tests."""
    zero = lambda x, y: np.zeros_like(x)
    return ProblemSpec(
        name="heat",
        nfields=1,
        diffusion=(1.0,),
        reaction=(lambda v: np.zeros_like(v),),
        reaction_jac=((lambda v: np.zeros_like(v),),),
        source=(source,),
        initial=(initial or zero,),
        bc=bc,
        exact=exact,
        exact_flux=exact_flux,
        initial_projection="hdg" if exact is not None else "l2",
    )


SCHNAKENBERG_KAPPA = 100.0
SCHNAKENBERG_A = 0.1305
SCHNAKENBERG_B = 0.7695
SCHNAKENBERG_D = (0.05, 1.0)


def schnakenberg() -> ProblemSpec:
    """Two-field Schnakenberg activator/inhibitor system with zero-flux
    boundary conditions and a small Gaussian kick off the homogeneous
    steady state (C_a, C_i) = (a + b, b / (a + b)^2)."""
    kappa, a, b = SCHNAKENBERG_KAPPA, SCHNAKENBERG_A, SCHNAKENBERG_B

    def F1(ca, ci):
        return -kappa * (a - ca + ca**2 * ci)

    def F2(ca, ci):
        return -kappa * (b - ca**2 * ci)

    jac = (
        (
            lambda ca, ci: -kappa * (-1.0 + 2.0 * ca * ci),
            lambda ca, ci: -kappa * ca**2,
        ),
        (
            lambda ca, ci: 2.0 * kappa * ca * ci,
            lambda ca, ci: kappa * ca**2,
        ),
    )

    def ca0(x, y):
        return a + b + 1e-3 * np.exp(-100.0 * ((x - 1.0 / 3.0) ** 2 + (y - 0.5) ** 2))

    def ci0(x, y):
        return b / (a + b) ** 2 + np.zeros_like(x)

    return ProblemSpec(
        name="schnakenberg",
        nfields=2,
        diffusion=SCHNAKENBERG_D,
        reaction=(F1, F2),
        reaction_jac=jac,
        source=(None, None),
        initial=(ca0, ci0),
        bc="neumann",
        initial_projection="l2",
    )


def schnakenberg_homogeneous() -> ProblemSpec:
    """Schnakenberg with the perturbation removed; the homogeneous
    steady state is an exact equilibrium of the discrete system."""
    a, b = SCHNAKENBERG_A, SCHNAKENBERG_B
    base = schnakenberg()
    return ProblemSpec(
        name="schnakenberg_homogeneous",
        nfields=2,
        diffusion=base.diffusion,
        reaction=base.reaction,
        reaction_jac=base.reaction_jac,
        source=base.source,
        initial=(
            lambda x, y: (a + b) + np.zeros_like(x),
            lambda x, y: b / (a + b) ** 2 + np.zeros_like(x),
        ),
        bc="neumann",
        initial_projection="l2",
    )


_REGISTRY: dict[str, Callable[[], ProblemSpec]] = {
    "allen_cahn": allen_cahn,
    "schnakenberg": schnakenberg,
    "schnakenberg_homogeneous": schnakenberg_homogeneous,
}


def by_name(name: str) -> ProblemSpec:
    try:
        return _REGISTRY[name]()
    except KeyError:
        raise ValueError(
            f"unknown problem {name!r}; available: {sorted(_REGISTRY)}"
        ) from None


def available() -> list[str]:
    return sorted(_REGISTRY)
