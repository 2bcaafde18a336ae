"""Basis construction, orthonormality, encode/decode/project contracts."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mono.basis import (CapacityError, Fourier, PiecewisePoly, build_basis,
                        read_basis, write_basis)
from mono.gridfn import GridFunction, GridSpec, l2_norm


def _grid(m=257, dim=1):
    return GridSpec(dim, m, 1)


class TestFourierConstruction:
    def test_first_three_elements(self):
        basis = build_basis(_grid(), Fourier(), 3)
        x = _grid().nodes()[:, 0]
        assert np.allclose(basis.table[0], 1.0, atol=1e-12)
        assert np.allclose(basis.table[1], np.sqrt(2) * np.sin(2 * np.pi * x),
                           atol=1e-12)
        assert np.allclose(basis.table[2], np.sqrt(2) * np.cos(2 * np.pi * x),
                           atol=1e-12)
        assert basis.gram_deviation() < 1e-8

    def test_constant_first_any_size(self):
        for n in (1, 2, 7):
            basis = build_basis(_grid(65), Fourier(), n)
            assert np.allclose(basis.table[0], 1.0)
            assert basis.kappa[0] == 0.0

    def test_capacity(self):
        with pytest.raises(CapacityError):
            build_basis(_grid(17), Fourier(), 64)


class TestPiecewiseConstruction:
    def test_haar_pair(self):
        basis = build_basis(_grid(257), PiecewisePoly(max_degree=0, levels=1), 2)
        assert np.allclose(basis.table[0], 1.0, atol=1e-12)
        assert basis.gram_deviation() < 1e-12
        # Independent oracle: the +-1 step with the cell-average convention
        # at the shared node, re-orthonormalized under the same quadrature.
        spec = _grid(257)
        x = spec.nodes()[:, 0]
        w = spec.quad_weights()
        raw = np.where(x < 0.5, 1.0, -1.0)
        raw[np.isclose(x, 0.5)] = 0.0
        raw -= np.dot(w * basis.table[0], raw) * basis.table[0]
        raw /= np.sqrt(np.dot(w * raw, raw))
        assert np.allclose(basis.table[1], raw, atol=1e-12)
        # Away from the split node the element is constant of opposite signs.
        left, right = x < 0.5, x > 0.5
        assert np.ptp(basis.table[1][left]) < 1e-12
        assert np.ptp(basis.table[1][right]) < 1e-12
        assert basis.table[1][0] > 0 > basis.table[1][-1]

    def test_single_element_is_constant(self):
        for family in (Fourier(), PiecewisePoly(1, 2)):
            basis = build_basis(_grid(65), family, 1)
            assert np.allclose(basis.table[0], 1.0, atol=1e-12)

    def test_capacity(self):
        # p=0, levels=1 in 1-D spans exactly two functions
        with pytest.raises(CapacityError):
            build_basis(_grid(65), PiecewisePoly(max_degree=0, levels=1), 3)

    def test_two_dimensional_gram(self):
        basis = build_basis(GridSpec(2, 65, 1), PiecewisePoly(1, 2), 64)
        assert basis.gram_deviation() < 1e-10


class TestEncodeDecode:
    def setup_method(self):
        self.grid = _grid(257)
        self.basis = build_basis(self.grid, Fourier(), 8)

    def test_constant(self):
        one = GridFunction.constant(self.grid, 1.0)
        coeffs = self.basis.encode(one)
        assert coeffs[0, 0] == pytest.approx(1.0, abs=1e-12)
        assert np.allclose(coeffs[1:], 0.0, atol=1e-12)

    def test_pure_sine(self):
        u = GridFunction.from_callable(
            self.grid, lambda x: np.sqrt(2) * np.sin(2 * np.pi * x[:, 0]))
        coeffs = self.basis.encode(u)
        assert coeffs[1, 0] == pytest.approx(1.0, abs=1e-8)
        assert abs(coeffs[0, 0]) < 1e-8

    def test_ramp_against_analytic_integral(self):
        # integral_0^1 x sqrt(2) sin(2 pi x) dx = -sqrt(2)/(2 pi); the
        # trapezoid rule needs m=1025 to sit inside 1e-5 of it.
        grid = _grid(1025)
        basis = build_basis(grid, Fourier(), 3)
        u = GridFunction.from_callable(grid, lambda x: x[:, 0])
        coeffs = basis.encode(u)
        assert coeffs[1, 0] == pytest.approx(-np.sqrt(2) / (2 * np.pi),
                                             abs=1e-5)

    def test_decode_unit_vector(self):
        e1 = np.zeros(8)
        e1[0] = 1.0
        fn = self.basis.decode(e1)
        assert np.allclose(fn.values, 1.0, atol=1e-12)

    def test_decode_zero(self):
        assert np.allclose(self.basis.decode(np.zeros(8)).values, 0.0)

    def test_decode_isometry(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            a = rng.standard_normal(8)
            fn = self.basis.decode(a)
            assert l2_norm(fn) == pytest.approx(np.linalg.norm(a), abs=1e-9)

    @given(st.integers(0, 2 ** 31))
    @settings(max_examples=30, deadline=None)
    def test_encode_contraction_decode_isometry(self, seed):
        rng = np.random.default_rng(seed)
        u = GridFunction(self.grid, rng.standard_normal(self.grid.size))
        coeffs = self.basis.encode(u)
        assert np.linalg.norm(coeffs) <= l2_norm(u) * (1 + 1e-10)
        assert np.array_equal(
            np.round(self.basis.encode(self.basis.decode(coeffs)) - coeffs, 10),
            np.zeros_like(coeffs))


class TestProjection:
    def setup_method(self):
        self.grid = _grid(257)
        self.basis = build_basis(self.grid, Fourier(), 5)

    def test_fixes_span(self):
        a = np.array([0.3, -1.2, 0.5, 0.0, 2.0])
        u = self.basis.decode(a)
        assert l2_norm(self.basis.project(u) - u) < 1e-9

    def test_idempotent(self):
        rng = np.random.default_rng(1)
        u = GridFunction(self.grid, rng.standard_normal(self.grid.size))
        once = self.basis.project(u)
        twice = self.basis.project(once)
        assert l2_norm(twice - once) < 1e-10

    def test_kills_excluded_mode(self):
        big = build_basis(self.grid, Fourier(), 6)
        u = GridFunction(self.grid, big.table[0] + big.table[5])
        proj = self.basis.project(u)
        assert l2_norm(proj - GridFunction(self.grid, big.table[0])) < 1e-8


class TestCacheFile:
    def test_roundtrip(self, tmp_path):
        basis = build_basis(_grid(65), PiecewisePoly(1, 2), 6)
        path = tmp_path / "basis.bin"
        write_basis(path, basis)
        back = read_basis(path)
        assert back.family == basis.family
        assert np.array_equal(back.table, basis.table)
        assert np.array_equal(back.kappa, basis.kappa)
        write_basis(tmp_path / "again.bin", back)
        assert (tmp_path / "again.bin").read_bytes() == path.read_bytes()
