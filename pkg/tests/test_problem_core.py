import numpy as np
import pytest

from core.errors import ConfigError
from core.problem.oracle import (OracleProblem, complete_step, composite_value, descent_condition,
                                 forward_step, lower_bound_value, prox_grad_step, slack)
from core.problem.problems import ProblemKind, ProblemSpec, make_problem


def _quadratic(center: float = 0.0) -> OracleProblem:
    return OracleProblem(
        dimension=1,
        smooth=lambda x: 0.5 * float((x[0] - center) ** 2),
        smooth_gradient=lambda x: x - center,
        regularizer=lambda x: 0.0,
        proximal=lambda x, tau: x,
        lipschitz_hint=1.0,
        name="quad",
    ).with_counter()


def test_invalid_problem_parameters():
    with pytest.raises(ConfigError):
        OracleProblem(dimension=0, smooth=abs, smooth_gradient=abs, regularizer=abs, proximal=max)
    with pytest.raises(ConfigError):
        OracleProblem(dimension=2, smooth=abs, smooth_gradient=abs, regularizer=abs, proximal=max,
                      mu_f=-1.0)
    with pytest.raises(ConfigError):
        OracleProblem(dimension=2, smooth=abs, smooth_gradient=abs, regularizer=abs, proximal=max,
                      lipschitz_hint=0.0)


def test_counters_are_private_copies(small_lasso):
    prob, x0 = small_lasso
    first, second = prob.with_counter(), prob.with_counter()
    first.f_gradient(x0)
    assert first.counter.gradient_calls == 1
    assert second.counter.gradient_calls == 0
    assert prob.counter is None


def test_composite_value_infeasible_point():
    prob, _ = make_problem(ProblemSpec(ProblemKind.NNLS, rows=10, cols=10, seed=0, sparsity=0.5))
    prob = prob.with_counter()
    x = np.ones(10)
    x[3] = -1.0
    assert composite_value(prob, x) == np.inf
    assert np.isfinite(composite_value(prob, np.ones(10)))
    assert prob.counter.objective_calls == 2


def test_prox_step_costs_one_gradient_and_one_prox(small_lasso):
    prob, x0 = small_lasso
    prob = prob.with_counter()
    result = prox_grad_step(prob, x0, prob.lipschitz_hint)
    assert prob.counter.snapshot() == {"gradient_calls": 1, "prox_calls": 1, "objective_calls": 1}
    np.testing.assert_allclose(result.mapping, prob.lipschitz_hint * (x0 - result.point))
    assert result.fallback_step == pytest.approx(1.0 / prob.lipschitz_hint)


def test_descent_condition_holds_above_lipschitz_constant():
    prob = _quadratic(2.0)
    x = np.array([5.0])
    assert descent_condition(prob, x, forward_step(prob, x, 1.0), 1.0)
    assert descent_condition(prob, x, forward_step(prob, x, 3.0), 3.0)
    assert not descent_condition(prob, x, forward_step(prob, x, 0.25), 0.25)


@pytest.mark.parametrize("kind", list(ProblemKind))
def test_mapping_entry_is_global_lower_bound(kind, rng):
    prob, x0 = make_problem(ProblemSpec(kind, rows=15, cols=12, seed=7))
    L = 2.0 * prob.lipschitz_hint
    forward = forward_step(prob, x0, L)
    assert descent_condition(prob, x0, forward, L)
    result = complete_step(prob, x0, L, forward)
    for _ in range(100):
        y = result.point + rng.standard_normal(prob.dimension) * rng.uniform(0.01, 10.0)
        if kind == ProblemKind.NNLS:
            y = np.abs(y)
        value = prob.f_value(y) + prob.psi_value(y)
        assert lower_bound_value(result, x0, y, 0.0) <= value + 1e-10 * (1.0 + abs(value))


def test_strongly_convex_mapping_uses_shifted_step(small_ridge):
    prob, x0 = small_ridge
    L = prob.lipschitz_hint * 2.0
    result = prox_grad_step(prob, x0, L)
    assert result.step_inverse == pytest.approx(L + prob.mu_psi)
    np.testing.assert_allclose(result.mapping, (L + prob.mu_psi) * (x0 - result.point))


def test_slack_scales_with_reference():
    assert slack(0.0) < slack(1e6)
    assert slack(-1e6) == slack(1e6)


@pytest.mark.parametrize("kind", list(ProblemKind))
def test_step_subgradient_supports_regularizer(kind, rng):
    prob, x0 = make_problem(ProblemSpec(kind, rows=15, cols=12, seed=7))
    L = 2.0 * prob.lipschitz_hint
    result = prox_grad_step(prob, x0, L)
    T = result.point
    # L(x - T) - ∇f(x) 是 Ψ 在 T 处的次梯度
    xi = L * (x0 - T) - result.gradient
    psi_T = prob.psi_value(T)
    for _ in range(100):
        y = T + rng.standard_normal(prob.dimension) * rng.uniform(0.01, 10.0)
        if kind == ProblemKind.NNLS:
            y = np.abs(y)
        d = y - T
        psi_y = prob.psi_value(y)
        terms = (psi_T, float(xi @ d), 0.5 * prob.mu_psi * float(d @ d))
        tolerance = 1e-10 * (1.0 + abs(psi_y) + sum(abs(t) for t in terms))
        assert psi_y >= sum(terms) - tolerance


@pytest.mark.parametrize("kind", list(ProblemKind))
@pytest.mark.parametrize("tau", [1e-3, 0.1, 10.0])
def test_prox_is_optimal_for_its_subproblem(kind, tau, rng):
    prob, _ = make_problem(ProblemSpec(kind, rows=15, cols=12, seed=7))
    x = 3.0 * rng.standard_normal(prob.dimension)
    z = prob.prox(x, tau)
    psi_z = prob.psi_value(z)
    assert np.isfinite(psi_z)
    u = (x - z) / tau
    for _ in range(50):
        w = z + rng.standard_normal(prob.dimension) * rng.uniform(0.01, 10.0)
        if kind == ProblemKind.NNLS:
            w = np.abs(w)
        psi_w = prob.psi_value(w)
        d = w - z
        terms = (psi_z, float(u @ d), 0.5 * prob.mu_psi * float(d @ d))
        tolerance = 1e-10 * (1.0 + abs(psi_w) + sum(abs(t) for t in terms))
        assert psi_w >= sum(terms) - tolerance

        near = psi_z + float((z - x) @ (z - x)) / (2.0 * tau)
        far = psi_w + float((w - x) @ (w - x)) / (2.0 * tau)
        assert near <= far + 1e-10 * (1.0 + abs(near) + abs(far))
