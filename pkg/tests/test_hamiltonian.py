import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mildhjb.errors import ConfigError
from mildhjb.grid import GridFunction, uniform_axes
from mildhjb.hamiltonian import (
    HamiltonianSpec,
    check_concavity,
    feedback_control,
    h_cv,
    h_min,
    nisio_g,
    nisio_generator_residual,
    nisio_step,
    search_tolerance,
)

BALL = HamiltonianSpec(control_kind="ball", radius=1.0, dim=1, l1_coeff=0.5)
ZERO = HamiltonianSpec(control_kind="points", points=((0.0,),), l1_coeff=0.0)
TWO_POINTS = HamiltonianSpec(control_kind="points", points=((-1.0,), (1.0,)), l1_coeff=0.0)
BOX2 = HamiltonianSpec(control_kind="box", lower=(-1.0, -0.5), upper=(1.0, 2.0), l1_coeff=0.3)


def grid_oracle(p, lo=-1.0, hi=1.0, c=0.5):
    u = np.linspace(lo, hi, 200_001)
    return float(np.min(p * u + c * u * u))


@pytest.mark.parametrize("p,expected", [(0.5, -0.125), (2.0, -1.5)])
def test_h_min_examples(p, expected):
    assert float(h_min(BALL, [p])) == pytest.approx(expected, abs=1e-14)
    assert grid_oracle(p) == pytest.approx(expected, abs=1e-9)


def test_h_min_single_point():
    for p in (-3.0, 0.0, 7.0):
        assert float(h_min(ZERO, [p])) == 0.0


def test_feedback_examples():
    assert float(feedback_control(BALL, [0.5])[0]) == pytest.approx(-0.5)
    assert float(feedback_control(BALL, [0.0])[0]) == 0.0
    assert float(feedback_control(TWO_POINTS, [0.0])[0]) == -1.0


@settings(max_examples=60, deadline=None)
@given(st.floats(-10, 10), st.floats(-10, 10))
def test_box_feedback_in_set_and_optimal(p1, p2):
    p = np.array([p1, p2])
    u = feedback_control(BOX2, p)
    assert BOX2.contains(u)
    rng = np.random.default_rng(0)
    trial = rng.uniform([-1, -0.5], [1, 2], (500, 2))
    assert float(h_min(BOX2, p)) <= h_cv(BOX2, p, trial).min() + 1e-12


def test_callable_cost_uses_search():
    spec = HamiltonianSpec(control_kind="ball", radius=1.0, dim=1, l1=lambda u: 0.5 * np.sum(u * u, axis=-1))
    for p in (-2.0, -0.3, 0.0, 0.8, 1.7):
        assert float(h_min(spec, [p])) == pytest.approx(float(h_min(BALL, [p])), abs=search_tolerance(spec))


@settings(max_examples=100, deadline=None)
@given(st.floats(-20, 20), st.floats(-20, 20))
def test_lipschitz_with_declared_constant(p, q):
    diff = abs(float(h_min(BALL, [p])) - float(h_min(BALL, [q])))
    assert diff <= BALL.lipschitz * abs(p - q) + 1e-12


def test_concavity_reports():
    for spec in (BALL, TWO_POINTS, BOX2):
        rep = check_concavity(spec, n_samples=500)
        assert rep.passed
        assert rep.worst_violation <= max(rep.tolerance, search_tolerance(spec))


def test_nisio_g_examples():
    assert float(nisio_g(ZERO, [0.7], M=2.0)) == pytest.approx(1.4, abs=1e-12)
    assert float(nisio_g(BALL, [0.0], M=2.0)) == pytest.approx(0.0, abs=1e-12)


def test_nisio_g_dominates_sampled_p():
    M = 2.0
    p = np.linspace(-M, M, 401)
    for a in (-1.5, -0.3, 0.0, 0.4, 1.1):
        g = float(nisio_g(BALL, [a], M))
        assert g >= np.max(h_min(BALL, p[:, None]) - a * p) - 1e-12


def test_nisio_g_convex_midpoint():
    rng = np.random.default_rng(2)
    for _ in range(50):
        a, b = rng.uniform(-3, 3, 2)
        mid = float(nisio_g(BALL, [(a + b) / 2], 2.0))
        assert mid <= 0.5 * (float(nisio_g(BALL, [a], 2.0)) + float(nisio_g(BALL, [b], 2.0))) + 1e-9


def test_g_duality_reconstructs_h_min():
    M = 2.0
    alpha = np.linspace(-M, M, 4001)[:, None]
    g = nisio_g(BALL, alpha, M)
    for p in (-1.5, -0.4, 0.0, 0.9, 1.8):
        rec = np.min(alpha[:, 0] * p + g)
        assert rec == pytest.approx(float(h_min(BALL, [p])), abs=2e-6)


def _smooth(axes, f, df):
    x = axes[0]
    return GridFunction(axes, f(x), df(x)[:, None])


def test_nisio_constant_fixed_for_zero_hamiltonian():
    axes = uniform_axes([3.0], 61)
    u = GridFunction(axes, np.full(61, 2.5), np.zeros((61, 1)))
    out = nisio_step(ZERO, u, 0.3)
    assert np.allclose(out.values, 2.5)


def test_nisio_step_upper_bound_and_monotone():
    axes = uniform_axes([3.0], 201)
    x = axes[0]
    u = GridFunction(axes, np.sin(x))
    v = GridFunction(axes, np.sin(x) + 0.1 + 0.05 * np.cos(3 * x) ** 2)
    nu, nv = nisio_step(BALL, u, 0.2, M=2.0), nisio_step(BALL, v, 0.2, M=2.0)
    g0 = float(nisio_g(BALL, [0.0], 2.0))
    assert np.all(nu.values <= u.values + 0.2 * g0 + 1e-12)
    assert np.all(nu.values <= nv.values + 1e-12)


def test_nisio_contraction_random_pairs():
    axes = uniform_axes([3.0], 301)
    x = axes[0]
    rng = np.random.default_rng(4)
    for _ in range(10):
        a, b = rng.normal(size=(2, 3))
        u = GridFunction(axes, a[0] * np.cos(a[1] * x + a[2]))
        v = GridFunction(axes, b[0] * np.cos(b[1] * x + b[2]))
        for t in (0.1, 0.5, 1.0):
            d = np.abs(nisio_step(BALL, u, t, M=2.0).values - nisio_step(BALL, v, t, M=2.0).values).max()
            assert d <= np.abs(u.values - v.values).max() * (1 + 1e-8)


def test_nisio_generator_limit_decreases():
    axes = uniform_axes([4.0], 801)
    u = _smooth(axes, np.cos, lambda x: -np.sin(x))
    res = [nisio_generator_residual(BALL, u, e) for e in (0.1, 0.05, 0.025)]
    assert res[0] > res[1] > res[2]
    assert res[0] / res[2] >= 2


def test_nisio_substeps_compose():
    axes = uniform_axes([3.0], 121)
    u = _smooth(axes, np.cos, lambda x: -np.sin(x))
    two = nisio_step(BALL, nisio_step(BALL, u, 0.1, M=2.0), 0.1, M=2.0)
    assert np.allclose(nisio_step(BALL, u, 0.2, substeps=2, M=2.0).values, two.values)


def test_nisio_rejects_nonpositive_step():
    axes = uniform_axes([1.0], 5)
    with pytest.raises(ValueError):
        nisio_step(BALL, GridFunction(axes, np.zeros(5)), 0.0)


@pytest.mark.parametrize("kwargs", [
    {"control_kind": "ball", "radius": -1.0},
    {"control_kind": "box", "lower": (1.0,), "upper": (0.0,)},
    {"control_kind": "points", "points": ()},
    {"control_kind": "ball", "l1_coeff": -1.0},
    {"control_kind": "disk"},
])
def test_spec_validation(kwargs):
    with pytest.raises(ConfigError):
        HamiltonianSpec(**kwargs)


def test_table_cost():
    spec = HamiltonianSpec(control_kind="points", points=((0.0,), (1.0,)), l1_kind="table", l1_table=(0.0, -0.5))
    assert float(h_min(spec, [0.0])) == -0.5
    assert float(h_min(spec, [1.0])) == 0.0
    assert spec.cost_sup == 0.5
