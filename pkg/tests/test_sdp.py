import numpy as np
import pytest
from scipy.optimize import minimize

from sdiqrng import kernels, matcore, sdp


def one_by_one(value=0.3):
    return sdp.SdpProblem.build([1], {0: [[1.0]]}, [({0: [[1.0]]}, value)])


def test_scalar_problem():
    sol = sdp.solve(one_by_one())
    assert sol.optimal
    assert sol.primal_value == pytest.approx(0.3, abs=1e-8)


def test_qubit_projection():
    p = sdp.SdpProblem.build([2], {0: np.diag([1.0, 0.0])}, [({0: np.eye(2)}, 1.0)])
    sol = sdp.solve(p)
    assert sol.optimal
    assert sol.primal_value == pytest.approx(1.0, abs=1e-7)
    assert np.allclose(sol.blocks[0], np.diag([1.0, 0.0]), atol=1e-6)


def random_instance(seed):
    """Two qubit blocks, a joint trace constraint and two random ones, feasible by construction."""
    rng = np.random.default_rng(seed)
    X0 = [matcore.random_density(2, rng) * 0.5 for _ in range(2)]
    ops = [(np.eye(2), np.eye(2))]
    for _ in range(2):
        ops.append((matcore.random_hermitian(2, rng), matcore.random_hermitian(2, rng)))
    cons = [({0: a, 1: b}, matcore.trace_inner(a, X0[0]) + matcore.trace_inner(b, X0[1])) for a, b in ops]
    C = {0: matcore.random_hermitian(2, rng), 1: matcore.random_hermitian(2, rng)}
    return sdp.SdpProblem.build([2, 2], C, cons), X0


def _blocks(z):
    out = []
    for k in range(2):
        a, b, c, e = z[4 * k: 4 * k + 4]
        L = np.array([[a, 0.0], [b + 1j * c, e]])
        out.append(L @ L.conj().T)
    return out


def brute_force(problem, start, starts=40, seed=0):
    """Multi-start local search over X_b = L_b L_b^dag (Cholesky parameterization)."""
    rng = np.random.default_rng(seed)

    def val(z, ops):
        return sum(matcore.trace_inner(o, x) for o, x in zip(ops, _blocks(z)))

    cons = [{"type": "eq", "fun": lambda z, e=e: val(z, problem.constraint_ops[e]) - problem.rhs[e]}
            for e in range(problem.n_constraints)]
    best = -np.inf
    chol = np.concatenate([[L[0, 0].real, L[1, 0].real, L[1, 0].imag, L[1, 1].real]
                           for L in (np.linalg.cholesky(x + 1e-9 * np.eye(2)) for x in start)])
    for k in range(starts):
        z0 = chol + (0 if k == 0 else 0.3 * rng.normal(size=8))
        res = minimize(lambda z: -val(z, problem.objective), z0, constraints=cons, method="SLSQP",
                       options={"ftol": 1e-12, "maxiter": 500})
        if res.success and max(abs(c["fun"](res.x)) for c in cons) < 1e-8:
            best = max(best, -res.fun)
    return best


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_random_instance_matches_brute_force(seed):
    problem, X0 = random_instance(seed)
    oracle = brute_force(problem, X0)
    sol = sdp.solve(problem)
    assert sol.optimal
    assert sol.primal_value == pytest.approx(oracle, abs=1e-4)
    assert sol.primal_value >= oracle - 1e-7


@pytest.mark.parametrize("seed", [1, 2, 3, 4])
def test_solution_contract_and_weak_duality(seed):
    problem, _ = random_instance(seed)
    sol = sdp.solve(problem)
    rep = sdp.check_solution(problem, sol)
    assert rep.min_block_eigenvalue >= -1e-9
    assert rep.max_primal_residual < 1e-8
    assert rep.dual_slack_margin >= -1e-7
    assert sol.dual_value >= sol.primal_value - 1e-7
    assert abs(rep.gap) <= 1e-8 * max(1.0, abs(sol.primal_value))


def test_minimize_sense_dual():
    problem, _ = random_instance(5)
    neg = sdp.SdpProblem(problem.block_dims, tuple(-c for c in problem.objective),
                         problem.constraint_ops, problem.rhs, "minimize")
    a, b = sdp.solve(problem), sdp.solve(neg)
    assert b.optimal and b.primal_value == pytest.approx(-a.primal_value, abs=1e-7)
    assert sdp.check_solution(neg, b).dual_slack_margin >= -1e-7


def test_check_solution_exact_and_defect():
    p = one_by_one()
    exact = sdp.SdpSolution(sdp.OPTIMAL, (np.array([[0.3 + 0j]]),), np.array([1.0]), 0.3, 0.3, 0.0)
    rep = sdp.check_solution(p, exact)
    assert rep.max_primal_residual == 0 and rep.gap == 0 and rep.dual_slack_margin == 0
    q = sdp.SdpProblem.build([2], {0: np.diag([1.0, 0.0])}, [({0: np.eye(2)}, 1.0)])
    sol = sdp.solve(q)
    bad = sdp.SdpSolution(sol.status, (sol.blocks[0] - 1e-3 * np.eye(2),), sol.y, 0, 0, 0)
    assert sdp.check_solution(q, bad).min_block_eigenvalue == pytest.approx(-1e-3, abs=1e-5)
    with pytest.raises(ValueError):
        sdp.check_solution(q, exact)


def test_infeasible_detected():
    p = sdp.SdpProblem.build([1], {0: [[1.0]]}, [({0: [[1.0]]}, -1.0)])
    assert sdp.solve(p).status == sdp.INFEASIBLE


def test_inconsistent_redundancy_is_infeasible():
    p = sdp.SdpProblem.build([2], {0: np.eye(2)}, [({0: np.eye(2)}, 1.0), ({0: 2 * np.eye(2)}, 3.0)])
    sol = sdp.solve(p)
    assert sol.status == sdp.INFEASIBLE and not sol.optimal


def test_redundant_rows_dropped_with_warning():
    p = sdp.SdpProblem.build([2], {0: np.diag([1.0, 0.0])},
                             [({0: np.eye(2)}, 1.0), ({0: 2 * np.eye(2)}, 2.0)])
    with pytest.warns(sdp.RedundantConstraintWarning):
        sol = sdp.solve(p)
    assert sol.optimal and sol.dropped == (1,)
    assert sol.primal_value == pytest.approx(1.0, abs=1e-7)
    dep = sdp.constraint_dependencies(p)
    assert dep.shape == (1, 2)


def test_non_convergence_is_not_optimal():
    problem, _ = random_instance(1)
    sol = sdp.solve(problem, max_iter=2)
    assert sol.status == sdp.NUMERICAL_FAILURE and not sol.optimal


@pytest.mark.parametrize("s", [0.5, 3.0, 40.0])
def test_scaling_covariance(s):
    problem, _ = random_instance(7)
    base = sdp.solve(problem).primal_value
    assert sdp.solve(problem.scaled(s)).primal_value == pytest.approx(s * base, rel=1e-8, abs=1e-9)


def test_restart_determinism():
    problem, _ = random_instance(8)
    a, b = sdp.solve(problem), sdp.solve(problem)
    assert abs(a.primal_value - b.primal_value) <= 1e-9
    assert np.array_equal(a.y, b.y)


def test_dump_roundtrip():
    problem, _ = random_instance(9)
    back = sdp.loads_problem(sdp.dumps_problem(problem))
    assert back.block_dims == problem.block_dims
    assert np.array_equal(back.rhs, problem.rhs)
    for x, y in zip(back.objective, problem.objective):
        assert np.array_equal(x, y)
    assert sdp.solve(back).primal_value == pytest.approx(sdp.solve(problem).primal_value, abs=1e-12)


def test_bad_problem_rejected():
    with pytest.raises(ValueError):
        sdp.SdpProblem.build([2], {0: np.eye(3)}, [])
    with pytest.raises(ValueError):
        sdp.SdpProblem.build([2], {}, [({3: np.eye(2)}, 1.0)])
    with pytest.raises(ValueError):
        sdp.SdpProblem.build([2], {}, [], sense="sideways")


def test_backends_agree(rng):
    found = kernels.backends()
    A = np.stack([np.stack([matcore.random_hermitian(3, rng) for _ in range(4)]) for _ in range(5)])
    X = np.stack([matcore.random_density(3, rng) for _ in range(4)])
    Z = np.stack([matcore.random_density(3, rng) + np.eye(3) for _ in range(4)])
    y = rng.normal(size=5)
    ref = found["python"]
    for impl in found.values():
        assert np.allclose(impl.schur(A, X, Z), ref.schur(A, X, Z), atol=1e-12)
        assert np.allclose(impl.apply_ops(A, X), ref.apply_ops(A, X), atol=1e-12)
        assert np.allclose(impl.adjoint(A, y), ref.adjoint(A, y), atol=1e-12)


def test_compiled_backend_built():
    assert "cython" in kernels.backends()


def test_solves_identical_across_backends():
    problem, _ = random_instance(10)
    vals = {}
    for name in kernels.backends():
        with kernels.use_backend(name):
            vals[name] = sdp.solve(problem).primal_value
    ref = vals["python"]
    assert all(abs(v - ref) < 1e-9 for v in vals.values())
