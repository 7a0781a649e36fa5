import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from hdgkg.nonlinear import (
    MaxIterationsExceeded,
    NewtonConfig,
    SingularJacobian,
    discrete_gradient,
    discrete_gradient_partials,
    discrete_gradient_quotient,
    f,
    fprime,
    newton_solve,
    potential,
)

reals = st.floats(-10, 10, allow_nan=False)


@pytest.mark.parametrize("a", [0.0, 1.0, -2.0])
def test_diagonal_is_f(a):
    assert discrete_gradient(a, a) == pytest.approx(a**3 - a)
    assert discrete_gradient_quotient(a, a) == pytest.approx(a**3 - a)


def test_examples():
    assert discrete_gradient(1.0, -1.0) == 0.0
    assert discrete_gradient(2.0, 0.0) == pytest.approx(1.0)
    assert (potential(2.0) - potential(0.0)) / 2.0 == pytest.approx(1.0)
    assert discrete_gradient_quotient(2.0, 0.0) == pytest.approx(1.0)


@given(reals, reals)
def test_symmetry(a, b):
    assert discrete_gradient(a, b) == discrete_gradient(b, a)


@given(reals, reals)
def test_mean_value_consistency(a, b):
    lhs = discrete_gradient(a, b) * (a - b)
    assert abs(lhs - (potential(a) - potential(b))) <= 1e-12 * (1 + abs(a) + abs(b)) ** 4


@given(reals)
def test_potential_nonnegative_and_derivative(s):
    assert potential(s) >= 0
    h = 1e-6 * max(1.0, abs(s))
    fd = (potential(s + h) - potential(s - h)) / (2 * h)
    assert fd == pytest.approx(f(s), rel=1e-6, abs=1e-6 * max(1.0, abs(s)) ** 3)
    fd2 = (f(s + h) - f(s - h)) / (2 * h)
    assert fd2 == pytest.approx(fprime(s), rel=1e-6, abs=1e-6 * max(1.0, abs(s)) ** 2)


@settings(max_examples=50)
@given(reals, reals)
def test_partials_against_finite_differences(a, b):
    h = 1e-6
    da, db = discrete_gradient_partials(a, b)
    scale = (1 + abs(a) + abs(b)) ** 2
    assert abs(da - (discrete_gradient(a + h, b) - discrete_gradient(a - h, b)) / (2 * h)) <= 1e-5 * scale
    assert abs(db - (discrete_gradient(a, b + h) - discrete_gradient(a, b - h)) / (2 * h)) <= 1e-5 * scale
    assert da == pytest.approx(0.25 * (a * a + b * b - 2) + 0.5 * a * (a + b))


def test_newton_scalar_cubic():
    res = newton_solve(f, fprime, 2.0)
    assert res.x == pytest.approx(1.0, abs=1e-12)
    assert res.iterations <= 8


def test_newton_quadratic_convergence():
    res = newton_solve(f, fprime, 2.0, NewtonConfig(tol=1e-15))
    errs = []
    x = 2.0
    for _ in range(res.iterations):
        x = x - f(x) / fprime(x)
        errs.append(abs(x - 1.0))
    ratios = [e1 / e0**2 for e0, e1 in zip(errs[:-1], errs[1:]) if e0 > 1e-7 and e1 > 0]
    assert ratios and max(ratios) < 5.0
    # history records the residual after every iterate
    assert len(res.history) == res.iterations + 1


def test_newton_linear_one_iteration():
    A = np.array([[3.0, 1.0], [1.0, 2.0]])
    b = np.array([1.0, -1.0])
    res = newton_solve(lambda x: A @ x - b, lambda x: A, np.zeros(2))
    assert res.iterations == 1
    assert np.allclose(A @ res.x, b)
    res = newton_solve(lambda x: A @ x - b, lambda x: sp.csr_matrix(A), np.zeros(2))
    assert res.iterations == 1


def test_newton_errors():
    with pytest.raises(MaxIterationsExceeded):
        newton_solve(lambda x: x**2 + 1.0, lambda x: 2 * x, 3.0, NewtonConfig(max_iter=5))
    with pytest.raises(SingularJacobian):
        newton_solve(lambda x: np.array([x[0] - 1.0, 1.0]), lambda x: np.zeros((2, 2)), np.zeros(2))


@pytest.mark.parametrize("kw", [dict(tol=0.0), dict(tol=-1.0), dict(max_iter=0), dict(damping=0.0), dict(damping=1.5)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        NewtonConfig(**kw)
