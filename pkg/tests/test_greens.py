import numpy as np
import pytest
import scipy.sparse as sp

from tilepile.exceptions import ClassMismatch, MeanNotZero, PoleAtZero
from tilepile.functions import FunctionOnTiling, ball, laplacian_of
from tilepile.greens import (GreensFunction, TransferMatrix, classify, discrete_derivative, g_hat, greens_infinite,
                             greens_torus, greens_torus_direct, greens_torus_point, local_limit_check,
                             moment_vector, rho_hat, stopped_measure, torus_laplacian)
from tilepile.greens import _hypercubic_law, _probe_points, _whitened_quadrature
from tilepile.library import get_spec
from tilepile.tiling import build_torus

from conftest import PLANAR

SPECS_2D3D = PLANAR + ["fcc", "Z3"]


def dipole(spec):
    return FunctionOnTiling({(0, (0,) * spec.dim): 1, (0, (1,) + (0,) * (spec.dim - 1)): -1})


class TestStoppedMeasure:
    def test_square_origin(self):
        rho = stopped_measure(get_spec("square"))
        assert rho.weights == pytest.approx({(1, 0): .25, (-1, 0): .25, (0, 1): .25, (0, -1): .25})

    def test_hex_off_lattice(self):
        spec = get_spec("hex")
        rho = stopped_measure(spec, (1, (0, 0)))
        assert len(rho.weights) == 3
        assert all(v == pytest.approx(1 / 3) for v in rho.weights.values())
        np.testing.assert_allclose(rho.moment, np.mean(list(rho.weights), axis=0))

    @pytest.mark.parametrize("name", PLANAR + ["fcc"])
    def test_symmetric_mass_one(self, name):
        rho = stopped_measure(get_spec(name))
        assert rho.mass == pytest.approx(1, abs=1e-12)
        for n, v in rho.weights.items():
            assert rho.weights.get(tuple(-a for a in n), 0) == pytest.approx(v, abs=1e-14)
        np.testing.assert_allclose(rho.moment, 0, atol=1e-12)

    def test_exponential_tail(self):
        # a square grid of class 1 hung below a sparse class 0, so excursions are unbounded
        from tilepile.tiling import TilingSpec

        edges = [(1, 1, (1, 0), 1), (1, 1, (0, 1), 1), (0, 1, (0, 0), 1)]
        spec = TilingSpec([[1, 0], [0, 1]], [[0, 0], ["1/2", "1/2"]], edges, name="decorated")
        rho = stopped_measure(spec)
        assert rho.mass == pytest.approx(1, abs=1e-10)
        r = np.arange(1, 6)
        tails = np.array([rho.tail_mass(x) for x in r])
        assert np.all(tails > 0)
        assert np.polyfit(r, np.log(tails), 1)[0] < 0


class TestFourier:
    def test_square_closed_form(self, rng):
        x = rng.random((10, 2))
        expected = (np.cos(2 * np.pi * x[:, 0]) + np.cos(2 * np.pi * x[:, 1])) / 2
        np.testing.assert_allclose(rho_hat(get_spec("square"), x), expected, atol=1e-13)

    @pytest.mark.parametrize("name", PLANAR + ["fcc", "D4", "Z3"])
    def test_zero_frequency(self, name):
        spec = get_spec(name)
        assert rho_hat(spec, np.zeros(spec.dim)) == pytest.approx(1)

    def test_q_at_one_stochastic(self):
        for name in PLANAR:
            np.testing.assert_allclose(TransferMatrix(get_spec(name)).at_one().sum(axis=1), 1)

    def test_hex_matches_direct_sum(self, rng):
        spec = get_spec("hex")
        x = rng.random((20, 2))
        direct = stopped_measure(spec).fourier(x)
        np.testing.assert_allclose(rho_hat(spec, x), direct, atol=1e-10)

    def test_g_hat(self, rng):
        sq = get_spec("square")
        assert 4 * g_hat(sq, [0.5, 0.5]) == pytest.approx(0.5)
        with pytest.raises(PoleAtZero):
            g_hat(sq, [0.0, 0.0])
        x = rng.random((5, 2))
        hx = get_spec("hex")
        np.testing.assert_allclose(g_hat(hx, x), 1 / (hx.degree[0] * (1 - rho_hat(hx, x))))

    @pytest.mark.parametrize("name", PLANAR)
    def test_no_other_fixed_frequency(self, name):
        g = np.stack(np.meshgrid(np.arange(16) / 16, np.arange(16) / 16), -1).reshape(-1, 2)[1:]
        assert np.all(np.abs(1 - rho_hat(get_spec(name), g)) > 1e-9)

    def test_modulus_below_one_non_bipartite(self):
        g = np.stack(np.meshgrid(np.arange(16) / 16, np.arange(16) / 16), -1).reshape(-1, 2)[1:]
        assert np.all(np.abs(rho_hat(get_spec("triangular"), g)) < 1 - 1e-9)

    def test_bipartite_square_has_unimodular_point(self):
        assert rho_hat(get_spec("square"), [0.5, 0.5]) == pytest.approx(-1)

    @pytest.mark.parametrize("name", ["square", "triangular", "hexagonal"])
    def test_taylor_matches_covariance(self, name, rng):
        spec = get_spec(name)
        cov = stopped_measure(spec).covariance()
        u = rng.normal(size=2)
        u /= np.linalg.norm(u)
        t = np.array([1e-3, 2e-3, 4e-3])
        vals = 1 - rho_hat(spec, t[:, None] * u).real
        coef = np.polyfit(t, vals, 2)[0]
        assert coef == pytest.approx(2 * np.pi ** 2 * u @ cov @ u, rel=1e-2)


class TestTorus:
    @pytest.mark.parametrize("name", SPECS_2D3D)
    def test_laplacian_inverts(self, name):
        spec = get_spec(name)
        eta = dipole(spec)
        t = greens_torus(spec, 8, eta)
        np.testing.assert_allclose(torus_laplacian(spec, t.values), eta.to_torus(spec.n_cells, 8, spec.dim),
                                   atol=1e-9)
        assert abs(np.asarray(t.values)[0].mean()) < 1e-12

    def test_laplacian_image(self):
        spec = get_spec("tri")
        w = FunctionOnTiling({(0, (0, 0)): 1})
        t = greens_torus(spec, 8, laplacian_of(spec, w))
        target = w.to_torus(1, 8, 2) - 1 / 64
        np.testing.assert_allclose(t.values, target, atol=1e-10)

    def test_mean_not_zero(self):
        with pytest.raises(MeanNotZero):
            greens_torus(get_spec("square"), 8, {(0, (0, 0)): 1})

    @pytest.mark.parametrize("name", ["hexagonal", "tetrakis", "fcc"])
    def test_two_routes_agree(self, name, rng):
        spec = get_spec(name)
        m = 6
        eta = FunctionOnTiling({(int(rng.integers(spec.n_cells)), tuple(rng.integers(-2, 3, spec.dim))): 1,
                                (int(rng.integers(spec.n_cells)), tuple(rng.integers(-2, 3, spec.dim))): -1})
        a = greens_torus(spec, m, eta).values
        b = greens_torus_direct(spec, m, eta).values
        np.testing.assert_allclose(a - a[0].mean(), b - b[0].mean(), atol=1e-9)

    def test_series_oracle_square(self):
        # g = 1/2 sum_n P_lazy^n (eta / deg), summed to convergence on the torus graph
        spec, m = get_spec("square"), 16
        g = build_torus(spec, m)
        eta = dipole(spec)
        rhs = eta.to_torus(1, m, 2).ravel() / 4.0
        P = sp.diags(1 / g.degree) @ g.adjacency
        Pl = 0.5 * (sp.identity(g.n_vertices) + P)
        term, acc = rhs.copy(), np.zeros_like(rhs)
        for _ in range(20000):
            acc += term
            term = Pl @ term
            if np.abs(term).max() < 1e-15:
                break
        series = 0.5 * acc
        series -= series.mean()
        np.testing.assert_allclose(greens_torus(spec, m, eta).flat(), series, atol=1e-9)

    def test_translation_equivariance(self):
        spec = get_spec("hex")
        eta = FunctionOnTiling({(0, (0, 0)): 1, (1, (0, 0)): -1})
        a = np.asarray(greens_torus(spec, 8, eta).values)
        b = np.asarray(greens_torus(spec, 8, eta.translate((2, 3))).values)
        np.testing.assert_allclose(np.roll(a, (2, 3), axis=(1, 2)), b, atol=1e-12)

    def test_point_green(self):
        spec = get_spec("hex")
        t = greens_torus_point(spec, 8)
        src = np.zeros((2, 8, 8))
        src[0] = -1 / 64
        src[0, 0, 0] += 1
        np.testing.assert_allclose(torus_laplacian(spec, t.values), src, atol=1e-10)


class TestInfinite:
    def test_laplacian_on_inner_ball(self):
        spec = get_spec("square")
        eta = FunctionOnTiling({(0, (0, 0)): 1, (0, (1, 0)): -2, (0, (2, 0)): 1})
        t = greens_infinite(spec, eta, 6, m1=64)
        inner, _ = ball(spec, 5)
        for (c, n) in inner:
            lap = 4 * t.value(c, n) - sum(t.value(c, (n[0] + a, n[1] + b))
                                          for a, b in ((1, 0), (-1, 0), (0, 1), (0, -1)))
            assert lap == pytest.approx(eta.get((c, n), 0), abs=1e-8)

    def test_antisymmetry(self):
        spec = get_spec("square")
        eta = FunctionOnTiling({(0, (1, 0)): 1, (0, (-1, 0)): -1, (0, (1, 1)): -1, (0, (-1, 1)): 1})
        t = greens_infinite(spec, eta, 4, m1=64)
        for (c, n), v in t.values.items():
            assert v == pytest.approx(-t.value(c, (-n[0], n[1])), abs=1e-10)

    def test_class_mismatch(self):
        with pytest.raises(ClassMismatch):
            greens_infinite(get_spec("square"), dipole(get_spec("square")), 3)

    def test_estimator(self):
        gf = GreensFunction(get_spec("square"), m=16).fit(dipole(get_spec("square")))
        assert gf.class_.tag == "C1"
        v = gf.predict([(0, (0, 0)), (0, (1, 0))])
        assert v[0] - v[1] == pytest.approx(0.5, abs=3e-3)


class TestDerivatives:
    def test_constant(self):
        spec = get_spec("square")
        t = greens_torus(spec, 8, dipole(spec))
        t.values = np.ones_like(t.values)
        assert np.all(discrete_derivative(t, (1, 0)).values == 0)

    def test_commute(self):
        spec = get_spec("tri")
        t = greens_torus(spec, 8, dipole(spec))
        a = discrete_derivative(discrete_derivative(t, (1, 0)), (0, 1)).values
        b = discrete_derivative(discrete_derivative(t, (0, 1)), (1, 0)).values
        np.testing.assert_allclose(a, b, atol=1e-14)
        assert discrete_derivative(t, (1, 1)).derivative == (1, 1)


class TestClassify:
    def test_square_examples(self):
        sq = get_spec("square")
        c = classify(dipole(sq), sq)
        assert c.tag == "C1"
        np.testing.assert_allclose(c.moment, [-1, 0])
        assert classify({(0, (0, 0)): 1, (0, (1, 0)): -2, (0, (2, 0)): 1}, sq).tag == "C2"
        assert classify({(0, (0, 0)): 1}, sq).tag == "C0"

    def test_hex_two_classes(self):
        hx = get_spec("hex")
        c = classify({(0, (0, 0)): 1, (1, (0, 0)): -1}, hx)
        assert c.tag == "C1"
        assert np.linalg.norm(c.moment) > 1e-6

    @pytest.mark.parametrize("name", ["hexagonal", "tetrakis"])
    def test_c2_invariant_under_target_class(self, name, rng):
        spec = get_spec(name)
        eta = laplacian_of(spec, FunctionOnTiling({(int(rng.integers(spec.n_cells)), (0, 0)): 1,
                                                   (int(rng.integers(spec.n_cells)), (1, 2)): -3}))
        for t in range(spec.n_cells):
            np.testing.assert_allclose(moment_vector(spec, eta, target=t), 0, atol=1e-10)


def half_lazy_power(spec, N, W):
    pts, w = stopped_measure(spec).as_arrays()
    arr = np.zeros((W,) * spec.dim)
    arr[(0,) * spec.dim] += 0.5
    for p, v in zip(pts, w):
        arr[tuple(int(a) % W for a in p)] += 0.5 * v
    return np.fft.ifftn(np.fft.fftn(arr) ** N).real


class TestLocalLimit:
    def test_square(self):
        rep = local_limit_check(get_spec("square"), N_max=256)
        assert rep["passed"] and set(rep["method"]) == {"fft-window"}

    def test_hypercubic_law_matches_fft(self):
        spec = get_spec("Z3")
        pN = half_lazy_power(spec, 20, 64)
        X = np.array([[0, 0, 0], [1, 0, 0], [2, 1, 0], [3, 2, 1], [5, 0, 0]])
        law = _hypercubic_law(3, 20, X)
        np.testing.assert_allclose(law[:, 20], [pN[tuple(x)] for x in X], atol=1e-14)
        np.testing.assert_allclose(law[0, :3], [1, 0.5, 0.25 + 0.25 / 6])

    def test_quadrature_matches_fft(self):
        spec = get_spec("fcc")
        pts, w = stopped_measure(spec).as_arrays()
        pts = np.vstack([pts, np.zeros((1, 3), dtype=np.int64)])
        w = np.concatenate([0.5 * w, [0.5]])
        cov = (pts * w[:, None]).T @ pts
        X = _probe_points(cov, 64, 3)
        pN = half_lazy_power(spec, 64, 128)
        ref = [pN[tuple(x % 128)] for x in X]
        np.testing.assert_allclose(_whitened_quadrature(pts, w, cov, 64, X), ref, atol=1e-10)

    def test_high_dimension_routes(self):
        rep = local_limit_check(get_spec("Z7"), N_max=128)
        assert "exact-probes" in rep["method"] and rep["passed"]

    def test_covariance_additive_and_odd_moments(self):
        spec = get_spec("tri")
        pts, w = stopped_measure(spec).as_arrays()
        cov = stopped_measure(spec).covariance()
        W = 64
        arr = np.zeros((W, W))
        for p, v in zip(pts, w):
            arr[tuple(int(a) % W for a in p)] += v
        N = 5
        pN = np.fft.ifft2(np.fft.fft2(arr) ** N).real
        grid = np.indices((W, W)).reshape(2, -1).T
        grid = np.where(grid >= W // 2, grid - W, grid)
        p = pN.ravel()
        np.testing.assert_allclose((grid.T * p) @ grid, N * cov, atol=1e-9)
        assert abs(p @ grid[:, 0] ** 3) < 1e-9
