import math

import numpy as np
import pytest

from ihdg import analysis, projections
from ihdg.analysis import ConvergenceTable, dt_for_level, l2_error, run_convergence
from ihdg.mesh import Mesh, generate_structured_square
from ihdg.problems import allen_cahn, heat

T_BENCH = math.pi / 2  # benchmark final time reproducing the reference errors


def test_l2_error_exact_representation():
    mesh = generate_structured_square(2)
    k = 1
    beta = projections.l2_project_element(lambda x, y: 1.0 + 2.0 * x - y, mesh, k)
    err = l2_error(beta, "W", lambda t, x, y: 1.0 + 2.0 * x - y, 0.0, mesh, k)
    assert err < 1e-12


def test_l2_error_of_zero_against_sine():
    mesh = generate_structured_square(16)
    k = 1
    beta = np.zeros(mesh.num_elements * 3)
    err = l2_error(
        beta, "W", lambda t, x, y: np.sin(np.pi * x) * np.sin(np.pi * y), 0.0, mesh, k
    )
    assert err == pytest.approx(0.5, abs=1e-12)


def test_l2_error_vector_space():
    mesh = generate_structured_square(2)
    k = 1
    nodes = projections.element_nodes(mesh, k)
    qx = 2.0 * nodes[..., 0]
    qy = -nodes[..., 1]
    alpha = np.concatenate([qx, qy], axis=1).reshape(-1)
    err = l2_error(alpha, "V", lambda t, x, y: (2.0 * x, -y), 0.0, mesh, k)
    assert err < 1e-13


def test_l2_error_unknown_space():
    mesh = generate_structured_square(1)
    with pytest.raises(ValueError):
        l2_error(np.zeros(2), "Q", lambda t, x, y: x, 0.0, mesh, 0)


def test_l2_error_invariant_under_element_relabeling():
    mesh = generate_structured_square(3)
    k = 1
    f = lambda x, y: np.sin(x) * y
    beta = projections.l2_project_element(f, mesh, k)
    err = l2_error(beta, "W", lambda t, x, y: np.cos(x + y), 0.0, mesh, k)
    perm = np.random.default_rng(4).permutation(mesh.num_elements)
    mesh2 = Mesh(mesh.vertices, mesh.elements[perm])
    beta2 = beta.reshape(mesh.num_elements, -1)[perm].reshape(-1)
    err2 = l2_error(beta2, "W", lambda t, x, y: np.cos(x + y), 0.0, mesh2, k)
    assert abs(err - err2) < 1e-13 * err


def test_rates_recomputable():
    tab = ConvergenceTable(
        k=1,
        levels=[2, 4, 8],
        err_q=[1.0, 0.25, 0.0625],
        err_u=[0.8, 0.2, 0.05],
        err_ustar=[0.1, 0.0125, 0.0015625],
    )
    assert math.isnan(tab.rate_q[0])
    assert tab.rate_q[1:] == pytest.approx([2.0, 2.0], abs=1e-12)
    assert tab.rate_ustar[1:] == pytest.approx([3.0, 3.0], abs=1e-12)
    for i in range(1, 3):
        assert tab.rate_u[i] == pytest.approx(
            math.log2(tab.err_u[i - 1] / tab.err_u[i]), abs=1e-12
        )


def test_table_formatting():
    tab = ConvergenceTable(
        k=0, levels=[2, 4], err_q=[1.0, 0.5], err_u=[0.4, 0.2], err_ustar=[0.3, 0.15]
    )
    text = tab.format_text()
    lines = text.splitlines()
    assert lines[0] == "degree k = 0"
    assert "err_u*" in lines[1]
    # coarsest-level rate column is blank
    assert "1.0000E+00" in lines[2]
    assert "1.00" not in lines[2].split("E+00", 1)[1].replace("1.0000E+00", "")
    assert " 1.00" in lines[3]
    csv = tab.to_csv()
    assert csv.splitlines()[0] == "level,err_q,rate_q,err_u,rate_u,err_ustar,rate_ustar"
    assert len(csv.splitlines()) == 3


def test_dt_for_level():
    assert dt_for_level("h", 8) == pytest.approx(0.125)
    assert dt_for_level("h2", 8) == pytest.approx(1.0 / 64.0)
    assert dt_for_level("fixed", 8, dt=0.01) == 0.01
    with pytest.raises(ValueError):
        dt_for_level("fixed", 8)
    with pytest.raises(ValueError):
        dt_for_level("h3", 8)


def test_convergence_requires_exact_solution():
    with pytest.raises(ValueError):
        run_convergence(heat(), 1, [2], "backward_euler", "h", t_final=0.5)


def test_steady_constant_equilibrium_errors_vanish():
    c = 2.0
    problem = heat(
        exact=(lambda t, x, y: c + 0.0 * x,),
        exact_flux=(lambda t, x, y: (0.0 * x, 0.0 * x),),
        bc="neumann",
    )
    tab = run_convergence(problem, 0, [2, 4], "backward_euler", "h", t_final=0.5)
    assert max(tab.err_q + tab.err_u + tab.err_ustar) < 1e-10
    assert math.isnan(tab.rate_u[0])


def test_allen_cahn_coarse_superconvergence_rate():
    tab = run_convergence(
        allen_cahn(), 1, [2, 4], "crank_nicolson", "h2", t_final=T_BENCH
    )
    assert 2.5 <= tab.rate_ustar[1] <= 3.5
    assert all(
        e1 > e2 for e1, e2 in zip(tab.err_u, tab.err_u[1:])
    )  # monotone refinement


def test_allen_cahn_k0_rate():
    tab = run_convergence(
        allen_cahn(), 0, [8, 16], "backward_euler", "h", t_final=T_BENCH
    )
    assert 0.8 <= tab.rate_u[1] <= 1.05
