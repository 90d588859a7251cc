import numpy as np
import pytest

from asyncschwarz.analysis import build_operators
from asyncschwarz.config import SolverConfig
from asyncschwarz.decomposition import build_coarse, partition_box
from asyncschwarz.problem import PoissonSpec, assemble_poisson, exact_solve
from asyncschwarz.subdomains import SchwarzSystem
from asyncschwarz.sync import local_update_f, solve_one_level, solve_sync, solve_two_level_sync

from conftest import make_system

ONE = SolverConfig(scheme="one_level")
MULT = SolverConfig(scheme="two_level_mult")
ADD = SolverConfig(scheme="two_level_add")


def dense_sequence(step, k, n):
    """Global iterates of x <- step(x) from zero, using dense operators."""
    xs, x = [], np.zeros(n)
    for _ in range(k):
        x = step(x)
        xs.append(x)
    return xs


def test_local_update_fixed_point():
    sysm = make_system((6, 6, 6), (2, 2, 1), overlap=1)
    x = exact_solve(sysm.A, sysm.b)
    xs = sysm.initial(x)
    for s in range(sysm.p):
        np.testing.assert_allclose(local_update_f(sysm, s, xs), xs[s], rtol=1e-12)


def test_local_update_single_subdomain_is_exact():
    sysm = make_system((5, 4, 3), (1, 1, 1), overlap=0, coarse=False)
    x1 = local_update_f(sysm, 0, sysm.initial())
    np.testing.assert_allclose(x1, exact_solve(sysm.A, sysm.b), rtol=1e-12)


def test_local_update_block_jacobi_oracle():
    A, b = assemble_poisson(PoissonSpec((4, 1, 1), reduced=True))
    d = partition_box((4, 1, 1), (2, 1, 1), 0)
    sysm = SchwarzSystem(A, b, d)
    Ad = A.toarray()
    D = np.zeros((4, 4))
    D[:2, :2], D[2:, 2:] = Ad[:2, :2], Ad[2:, 2:]
    ref = np.linalg.solve(D, b)
    xs = [local_update_f(sysm, s, sysm.initial()) for s in range(2)]
    np.testing.assert_allclose(np.concatenate(xs), ref, rtol=1e-14)
    # second step from the first iterate
    x1 = ref
    ref2 = x1 + np.linalg.solve(D, b - Ad @ x1)
    xs2 = [local_update_f(sysm, s, xs) for s in range(2)]
    np.testing.assert_allclose(np.concatenate(xs2), ref2, rtol=1e-14)


def test_zero_iterations_when_converged():
    sysm = make_system((6, 6, 6), (2, 2, 1))
    x = exact_solve(sysm.A, sysm.b)
    for cfg in (ONE, MULT, ADD):
        _, r = solve_sync(sysm, cfg, x0=x)
        assert r.iterations == 0 and r.converged


@pytest.mark.parametrize("cfg", [ONE, MULT, ADD], ids=["one", "mult", "add"])
def test_fixed_point_property(cfg):
    sysm = make_system((6, 6, 6), (2, 2, 1), overlap=2)
    x = exact_solve(sysm.A, sysm.b)
    xs = sysm.initial(x)
    if cfg.two_level:
        from asyncschwarz.sync import _coarse_solution, _residuals
        xt = _coarse_solution(sysm, _residuals(sysm, xs))
        assert np.max(np.abs(xt)) <= 1e-12 * np.max(np.abs(x))
    _, r = solve_sync(sysm, SolverConfig(scheme=cfg.scheme, k_max=1, epsilon=1e-300), x0=x)
    assert r.final_residual <= 1e-12 * np.linalg.norm(sysm.b)


def test_one_level_matches_dense_iteration_count():
    A, b = assemble_poisson(PoissonSpec((8, 1, 1), reduced=True))
    d = partition_box((8, 1, 1), (2, 1, 1), 1)
    sysm = SchwarzSystem(A, b, d)
    bundle = build_operators(A, d)
    _, r = solve_one_level(sysm, ONE, record_iterates=True)
    # dense run with the same stopping rule
    x, k = np.zeros(8), 0
    while True:
        tau = b - bundle.A @ x
        norm = np.sqrt(sum(float(tau[i] @ (wt * tau[i])) for i, wt in zip(d.subdomain_indices, d.weights)))
        if norm <= ONE.epsilon:
            break
        x = x + bundle.M @ tau
        k += 1
    assert r.iterations == k
    np.testing.assert_allclose(sysm.assemble(r.extra["iterates"][-1]), x, rtol=1e-10)


@pytest.mark.parametrize("weights", ["multiplicity", "restricted"])
@pytest.mark.parametrize("scheme", ["one_level", "two_level_mult", "two_level_add"])
def test_matches_dense_recursion(scheme, weights):
    A, b = assemble_poisson(PoissonSpec((5, 5, 4)))
    d = partition_box((5, 5, 4), (2, 2, 1), 1, weights)
    coarse = build_coarse(d, A)
    sysm = SchwarzSystem(A, b, d, coarse)
    bun = build_operators(A, d, coarse)
    cfg = SolverConfig(scheme=scheme, k_max=12, epsilon=1e-300)
    _, r = solve_sync(sysm, cfg, record_iterates=True)
    Ad, M, N = bun.A, bun.M, bun.N
    if scheme == "one_level":
        step = lambda x: x + M @ (b - Ad @ x)
    elif scheme == "two_level_mult":
        def step(x):
            y = x + N @ (b - Ad @ x)
            return y + M @ (b - Ad @ y)
    else:
        step = lambda x: x + M @ (b - Ad @ x) + N @ (b - Ad @ x)
    ref = dense_sequence(step, 12, len(b))
    for got, want in zip(r.extra["iterates"], ref):
        np.testing.assert_allclose(sysm.assemble(got), want, rtol=0, atol=1e-12 * np.max(np.abs(want)))
    # error propagation of mult is (I - MA)(I - NA)
    if scheme == "two_level_mult":
        xstar = np.linalg.solve(Ad, b)
        T = bun.I_MA @ bun.I_NA
        e1, e2 = ref[4] - xstar, ref[5] - xstar
        np.testing.assert_allclose(e2, T @ e1, atol=1e-9 * np.max(np.abs(xstar)))


def test_theta_zero_equals_one_level():
    sysm = make_system((6, 6, 6), (2, 2, 2))
    _, r1 = solve_one_level(sysm, ONE, record_iterates=True)
    _, r0 = solve_two_level_sync(sysm, SolverConfig(scheme="two_level_mult", theta=0.0), record_iterates=True)
    assert r0.iterations == r1.iterations
    for a, b in zip(r0.extra["iterates"], r1.extra["iterates"]):
        for xa, xb in zip(a, b):
            np.testing.assert_array_equal(xa, xb)


def test_layouts_identical_in_sync_mode():
    sysm = make_system((6, 6, 6), (2, 2, 2))
    _, ra = solve_sync(sysm, SolverConfig(coarse_layout="replicated"), record_iterates=True)
    _, rb = solve_sync(sysm, SolverConfig(coarse_layout="centralized"), record_iterates=True)
    assert ra.residual_history == rb.residual_history


@pytest.mark.parametrize("grid,procs,overlap", [
    ((8, 8, 8), (2, 2, 2), 1), ((8, 8, 8), (2, 2, 2), 2), ((12, 12, 12), (2, 2, 2), 1),
    ((12, 12, 6), (3, 3, 1), 2), ((10, 10, 10), (2, 2, 1), 0),
])
def test_two_level_no_worse_than_one_level(grid, procs, overlap):
    sysm = make_system(grid, procs, overlap)
    _, r1 = solve_sync(sysm, ONE)
    _, r2 = solve_sync(sysm, MULT)
    assert r1.converged and r2.converged
    assert r2.iterations <= r1.iterations


def test_final_residual_recomputed():
    sysm = make_system((8, 8, 8), (2, 2, 2))
    x, r = solve_sync(sysm, MULT)
    assert r.final_residual == float(np.linalg.norm(sysm.b - sysm.A @ x))
    assert r.final_residual <= 10 * MULT.epsilon


def test_residual_trend_non_increasing():
    sysm = make_system((8, 8, 8), (2, 2, 2), overlap=2)
    for cfg in (ONE, MULT):
        _, r = solve_sync(sysm, cfg)
        h = np.array(r.residual_history[5:])
        assert np.all(np.diff(h) <= 1e-12 * h[:-1])


def test_cg_local_solver():
    lu = make_system((8, 8, 8), (2, 2, 2))
    cg = make_system((8, 8, 8), (2, 2, 2), local_solver="cg:1e-12", coarse_solver="cg:1e-12")
    _, a = solve_sync(lu, MULT)
    _, b = solve_sync(cg, MULT)
    assert b.converged and abs(a.iterations - b.iterations) <= 1


def test_divergence_guard():
    # strong over-relaxation of the coarse correction blows up
    sysm = make_system((8, 8, 8), (2, 2, 2))
    _, r = solve_sync(sysm, SolverConfig(theta=50.0, k_max=500))
    assert r.diverged and not r.converged


def test_scheme_guards():
    sysm = make_system((4, 4, 4), (2, 1, 1), coarse=False)
    with pytest.raises(ValueError):
        solve_one_level(sysm, MULT)
    with pytest.raises(ValueError):
        solve_two_level_sync(sysm, MULT)


def test_sync_ticks():
    sysm = make_system((6, 6, 6), (2, 2, 1))
    _, r = solve_sync(sysm, MULT, slowdown=[1, 2, 3, 1], latency=2.0)
    assert r.sim_time == r.iterations * 5.0
