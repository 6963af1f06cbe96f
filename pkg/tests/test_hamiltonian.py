import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowvmc.errors import DomainError
from flowvmc.hamiltonian import (
    EIGEN_RANGE,
    Quadratic1D,
    QuarticHamiltonian,
    oscillator,
    potential,
    quadratic1d_ground,
    random_hamiltonian,
    set_adiabatic_alpha,
)
from flowvmc.numerics import RngStream, trapezoid


def _brute_force_quartic(u, x):
    """``(1/4!) sum lambda_ijkl x_i x_j x_k x_l`` with ``lambda = 3 delta_ij delta_kl u_ik``."""
    d = len(x)
    lam = np.zeros((d, d, d, d))
    for i, k in itertools.product(range(d), repeat=2):
        lam[i, i, k, k] = 3.0 * u[i, k]
    return np.einsum("ijkl,i,j,k,l->", lam, x, x, x, x) / 24.0


def _quadratic_expectation(a: float, b: float, q: Quadratic1D) -> float:
    """``<H>`` for ``exp(-(a + i b) x^2 / 2)`` by quadrature with exact derivatives."""
    x = np.linspace(-12, 12, 40001)
    psi = (a / math.pi) ** 0.25 * np.exp(-(a + 1j * b) * x**2 / 2)
    dpsi = -(a + 1j * b) * x * psi
    ddpsi = ((a + 1j * b) ** 2 * x**2 - (a + 1j * b)) * psi
    # H = (h_xx x^2 + h_xp (x p + p x) + h_pp p^2) / 2 with p = -i d/dx
    hpsi = 0.5 * (q.h_xx * x**2 * psi + q.h_xp * (-2j * x * dpsi - 1j * psi) - q.h_pp * ddpsi)
    return float(trapezoid((np.conj(psi) * hpsi).real, x))


class TestPotential:
    def test_one_dimensional_example(self):
        H = QuarticHamiltonian([[-1.0]], [[1.0]])
        assert potential(H, np.array([2.0])) == pytest.approx(0.0, abs=1e-15)

    def test_origin(self):
        H = random_hamiltonian(3, 0)
        assert H.potential(np.zeros(3)) == 0.0

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_four_index_sum(self, seed):
        H = random_hamiltonian(2, seed)
        x = RngStream(seed + 50).normal(2)
        expected = 0.5 * x @ H.h_xx @ x + _brute_force_quartic(H.u, x)
        assert H.potential(x) == pytest.approx(expected, rel=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 6), st.integers(0, 1000))
    def test_even(self, d, seed):
        H = random_hamiltonian(d, seed)
        x = RngStream(seed).normal((4, d))
        np.testing.assert_array_equal(H.potential(x), H.potential(-x))

    @pytest.mark.parametrize("seed", range(3))
    def test_bounded_below_along_rays(self, seed):
        H = random_hamiltonian(4, seed)
        dirs = RngStream(seed).normal((200, 4))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        assert np.all(H.potential(1e3 * dirs) > 1e9)

    def test_torch_matches_numpy(self):
        import torch

        H = random_hamiltonian(3, 1).with_alpha(0.3)
        x = RngStream(2).normal((7, 3))
        np.testing.assert_allclose(H.potential_t(torch.tensor(x)).numpy(), H.potential(x), rtol=1e-13)


class TestAdiabatic:
    def test_alpha_zero_is_pure_quartic(self):
        H = random_hamiltonian(2, 3)
        x = RngStream(0).normal((5, 2))
        np.testing.assert_allclose(set_adiabatic_alpha(H, 0.0).potential(x), H.quartic_part(x))

    def test_alpha_one_is_original(self):
        H = random_hamiltonian(2, 3)
        x = RngStream(0).normal((5, 2))
        np.testing.assert_array_equal(set_adiabatic_alpha(H, 1.0).potential(x), H.potential(x))

    def test_linearity(self):
        H = random_hamiltonian(2, 3)
        x = RngStream(0).normal((5, 2))
        np.testing.assert_allclose(H.with_alpha(0.5).potential(x), 0.5 * H.quadratic_part(x) + H.quartic_part(x))

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            oscillator(1).with_alpha(1.5)


class TestRandomHamiltonian:
    @pytest.mark.parametrize("d", [1, 2, 5, 10])
    def test_spectra_in_range(self, d):
        H = random_hamiltonian(d, d)
        lo, hi = EIGEN_RANGE
        for m in (H.u, -H.h_xx):
            ev = np.linalg.eigvalsh(m)
            assert ev.min() >= lo - 1e-10 and ev.max() <= hi + 1e-10

    def test_deterministic(self):
        a, b = random_hamiltonian(4, 17), random_hamiltonian(4, 17)
        np.testing.assert_array_equal(a.h_xx, b.h_xx)
        np.testing.assert_array_equal(a.u, b.u)

    def test_seeds_differ(self):
        assert not np.array_equal(random_hamiltonian(3, 1).u, random_hamiltonian(3, 2).u)

    def test_invalid_dimension(self):
        with pytest.raises(ValueError):
            random_hamiltonian(0, 1)

    def test_file_round_trip_is_bit_exact(self, tmp_path):
        H = random_hamiltonian(5, 9)
        H.save(tmp_path / "h.json")
        G = QuarticHamiltonian.load(tmp_path / "h.json")
        np.testing.assert_array_equal(G.h_xx, H.h_xx)
        np.testing.assert_array_equal(G.u, H.u)
        assert (G.alpha, G.seed) == (H.alpha, 9)


class TestValidation:
    def test_asymmetric(self):
        with pytest.raises(ValueError):
            QuarticHamiltonian([[1.0, 0.1], [0.0, 1.0]], np.eye(2))

    def test_indefinite_quartic(self):
        with pytest.raises(ValueError):
            QuarticHamiltonian(np.eye(2), np.diag([1.0, -1.0]))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            QuarticHamiltonian(np.eye(2), np.eye(3))


class TestQuadratic1D:
    def test_oscillator(self):
        assert quadratic1d_ground(Quadratic1D(1, 0, 1)) == (1.0, 0.0)

    def test_stiffer(self):
        assert quadratic1d_ground(Quadratic1D(4, 0, 1)) == (2.0, 0.0)

    def test_with_cross_term(self):
        a, b = quadratic1d_ground(Quadratic1D(1, 1, 2))
        assert (a, b) == pytest.approx((0.5, 0.5))

    @pytest.mark.parametrize("q", [Quadratic1D(1, 0, 1), Quadratic1D(4, 0, 1), Quadratic1D(1, 1, 2)])
    def test_minimises_expectation(self, q):
        a, b = quadratic1d_ground(q)
        e0 = _quadratic_expectation(a, b, q)
        for da, db in [(0.05, 0), (-0.05, 0), (0, 0.05), (0, -0.05)]:
            assert _quadratic_expectation(a + da, b + db, q) > e0
        # ground energy of the quadratic form is sqrt(discriminant) / 2
        assert e0 == pytest.approx(math.sqrt(q.discriminant) / 2, rel=1e-8)

    @pytest.mark.parametrize("q", [Quadratic1D(1, 1, 1), Quadratic1D(1, 0, -1), Quadratic1D(1, 2, 1)])
    def test_domain_error(self, q):
        with pytest.raises(DomainError):
            quadratic1d_ground(q)
