"""Randomized invariants over every built-in tiling."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tilepile.functions import FunctionOnTiling, laplacian_of
from tilepile.greens import classify, moment_vector, rho_hat, stopped_measure
from tilepile.library import builtin_names, get_spec
from tilepile.spectral import savings, torus_response

NAMES = builtin_names()
TORUS_SIDE = {1: 16, 2: 8, 3: 6, 4: 4}


def torus_side(spec):
    return TORUS_SIDE.get(spec.dim, 3)


@st.composite
def functions(draw, spec, zero_sum=True, radius=2, size=4):
    k, d = spec.n_cells, spec.dim
    items = draw(st.lists(st.tuples(st.integers(0, k - 1),
                                    st.tuples(*[st.integers(-radius, radius)] * d),
                                    st.integers(-2, 2).filter(bool)), min_size=1, max_size=size))
    nu = FunctionOnTiling([((c, n), v) for c, n, v in items])
    if zero_sum:
        nu = nu + FunctionOnTiling({(0, (0,) * d): -nu.total()})
    return nu


@st.composite
def spec_and_function(draw, zero_sum=True):
    spec = get_spec(draw(st.sampled_from(NAMES)))
    return spec, draw(functions(spec, zero_sum))


@st.composite
def shifts(draw, d, lo=-3, hi=3):
    return tuple(draw(st.tuples(*[st.integers(lo, hi)] * d)))


@given(spec_and_function(), st.data())
def test_savings_translation_invariant(sf, data):
    spec, nu = sf
    resp = torus_response(spec, torus_side(spec))
    t = data.draw(shifts(spec.dim))
    assert resp.savings(nu.translate(t)) == pytest.approx(resp.savings(nu), abs=1e-8)


@given(spec_and_function(), st.data())
def test_savings_invariant_under_laplacian_images(sf, data):
    spec, nu = sf
    resp = torus_response(spec, torus_side(spec))
    w = data.draw(functions(spec, zero_sum=False, size=3))
    assert resp.savings(nu + laplacian_of(spec, w)) == pytest.approx(resp.savings(nu), abs=1e-7)


@given(spec_and_function())
def test_laplacian_images_save_nothing(sf):
    spec, w = sf
    resp = torus_response(spec, torus_side(spec))
    assert resp.savings(laplacian_of(spec, w)) == pytest.approx(0, abs=1e-7)


@given(spec_and_function(), st.integers(0, 2 ** 32 - 1))
def test_savings_superadditive(sf, seed):
    spec, nu = sf
    xi = torus_response(spec, torus_side(spec)).xi(nu)
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 3, size=xi.shape)
    parts = [savings(xi, labels == i) for i in range(3)]
    assert savings(xi) >= sum(parts) - 1e-9
    assert all(p >= -1e-12 for p in parts)
    assert savings(xi) <= xi.size + 1e-9


@given(st.lists(st.floats(-3, 3, allow_nan=False), min_size=2, max_size=40), st.integers(0, 2 ** 32 - 1))
def test_superadditivity_of_the_functional(vals, seed):
    xi = np.array(vals)
    mask = np.random.default_rng(seed).random(xi.size) < 0.5
    assert savings(xi) >= savings(xi, mask) + savings(xi, ~mask) - 1e-9
    assert savings(xi + 0.37) == pytest.approx(savings(xi), abs=1e-9)
    assert savings(xi + np.arange(xi.size)) == pytest.approx(savings(xi), abs=1e-9)


@pytest.mark.parametrize("name", NAMES)
def test_rho_symmetric(name):
    spec = get_spec(name)
    rho = stopped_measure(spec).weights
    assert sum(rho.values()) == pytest.approx(1.0, abs=1e-12)
    for n, v in rho.items():
        assert rho.get(tuple(-a for a in n), 0.0) == pytest.approx(v, abs=1e-13)


@given(st.sampled_from(NAMES), st.integers(0, 2 ** 32 - 1))
def test_rho_hat_real_and_even(name, seed):
    spec = get_spec(name)
    x = np.random.default_rng(seed).random((3, spec.dim))
    r = rho_hat(spec, x)
    np.testing.assert_allclose(r.imag, 0, atol=1e-10)
    np.testing.assert_allclose(rho_hat(spec, -x), r, atol=1e-10)
    assert np.all(r.real <= 1 + 1e-12)


@given(spec_and_function(), st.data())
def test_class_translation_invariant(sf, data):
    spec, nu = sf
    t = data.draw(shifts(spec.dim, -5, 5))
    a, b = classify(nu, spec), classify(nu.translate(t), spec)
    assert a.level == b.level
    # the moment of a sum-zero function does not see translations
    np.testing.assert_allclose(moment_vector(spec, nu.translate(t)), moment_vector(spec, nu), atol=1e-9)


@given(spec_and_function(), st.data())
def test_c2_closed_under_translation_and_images(sf, data):
    spec, eta = sf
    # the commutator eta - translate(eta) has zero moment
    t = data.draw(shifts(spec.dim))
    nu = eta - eta.translate(t)
    nu = nu - nu.translate(data.draw(shifts(spec.dim)))
    w = data.draw(functions(spec, zero_sum=False, size=2))
    if not nu:
        return
    assert classify(nu, spec).level >= 2
    assert classify(nu + laplacian_of(spec, w), spec).level >= 2
    assert classify(nu.translate(t), spec).level >= 2


@pytest.mark.parametrize("name", NAMES)
def test_local_limit_bounded(name, local_limit_reports):
    rep = local_limit_reports[name]
    assert rep["bounded"] and rep["decreasing"], rep["scaled_error"]
