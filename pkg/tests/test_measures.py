"""Closed-form measure algebra against quadrature oracles and hand values."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from factories import corm_as_mixture_args, random_atoms, random_corm
from helpers import gauss_pdf, quad_inner
from latentmeasures.measures import (
    Atom,
    DensityGrid,
    TruncatedCoRM,
    atom_inner_matrix,
    evaluate_on_grid,
    gaussian_l2_inner,
    gram_matrix,
    group_weights,
    mixture_density,
)

HALF_ROOT_PI_INV = 0.28209479177387814  # 1/(2*sqrt(pi))


class TestGaussianInner:
    def test_equal_standard_normals(self):
        assert gaussian_l2_inner(Atom(0.0, 1.0), Atom(0.0, 1.0)) == pytest.approx(
            HALF_ROOT_PI_INV, abs=1e-15
        )

    def test_separated_pair_matches_quadrature(self):
        """(0,1)·(3,1) = N(3|0,2); dense trapezoid agrees to 1e-8."""
        val = gaussian_l2_inner(Atom(0.0, 1.0), Atom(3.0, 1.0))
        assert val == pytest.approx(2.973257230591e-02, abs=1e-12)
        oracle = quad_inner([1.0], [0.0], [1.0], [1.0], [3.0], [1.0])
        assert val == pytest.approx(oracle, abs=1e-8)

    def test_symmetry_random(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            a = Atom(float(rng.normal()), float(rng.uniform(0.2, 4.0)))
            b = Atom(float(rng.normal()), float(rng.uniform(0.2, 4.0)))
            assert gaussian_l2_inner(a, b) == gaussian_l2_inner(b, a)
            assert gaussian_l2_inner(a, b) > 0.0

    def test_random_pairs_match_quadrature(self):
        rng = np.random.default_rng(21)
        for _ in range(20):
            ma, mb = rng.uniform(-4, 4, size=2)
            va, vb = rng.uniform(0.25, 3.0, size=2)
            val = gaussian_l2_inner(Atom(ma, va), Atom(mb, vb))
            oracle = quad_inner([1.0], [ma], [va], [1.0], [mb], [vb])
            assert val == pytest.approx(oracle, abs=1e-8)


class TestAtomInnerMatrix:
    def test_matches_pairwise_calls(self):
        rng = np.random.default_rng(3)
        atoms = random_atoms(rng, n_atoms=6)
        mat = atom_inner_matrix(atoms)
        for i, a in enumerate(atoms):
            for j, b in enumerate(atoms):
                assert mat[i, j] == pytest.approx(gaussian_l2_inner(a, b), rel=1e-14)

    def test_exactly_symmetric_and_psd(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            mat = atom_inner_matrix(random_atoms(rng, n_atoms=5))
            assert np.array_equal(mat, mat.T)
            assert np.linalg.eigvalsh(mat).min() >= -1e-10

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            atom_inner_matrix(())


class TestMixtureDensity:
    def test_standard_normal_at_mode(self):
        val = mixture_density([1.0], [Atom(0.0, 1.0)], 0.0)
        assert val == pytest.approx(1.0 / math.sqrt(2.0 * math.pi), abs=1e-15)

    def test_single_component_selection(self):
        atoms = [Atom(-3.0, 1.0), Atom(2.0, 4.0)]
        val = mixture_density([0.0, 1.0], atoms, 2.0)
        assert val == pytest.approx(1.0 / math.sqrt(8.0 * math.pi), abs=1e-15)

    def test_two_component_value(self):
        atoms = [Atom(-1.0, 1.0), Atom(1.0, 1.0)]
        val = mixture_density([0.5, 0.5], atoms, 0.0)
        assert val == pytest.approx(0.241970724519, abs=1e-10)

    @given(gamma=st.floats(0.1, 50.0))
    @settings(max_examples=30, deadline=None)
    def test_linear_in_weights(self, gamma):
        atoms = [Atom(0.0, 1.0), Atom(1.5, 0.5)]
        base = mixture_density([0.4, 0.6], atoms, 0.7)
        scaled = mixture_density([0.4 * gamma, 0.6 * gamma], atoms, 0.7)
        assert scaled == pytest.approx(gamma * base, rel=1e-12)

    def test_input_validation(self):
        atoms = [Atom(0.0, 1.0)]
        with pytest.raises(ValueError):
            mixture_density([1.0, 2.0], atoms, 0.0)  # shape mismatch
        with pytest.raises(ValueError):
            mixture_density([-1.0], atoms, 0.0)
        with pytest.raises(ValueError):
            mixture_density([0.0], atoms, 0.0)  # no positive weight
        with pytest.raises(ValueError):
            mixture_density([math.nan], atoms, 0.0)
        with pytest.raises(ValueError):
            mixture_density([1.0], atoms, math.inf)


class TestEvaluateOnGrid:
    def test_standard_normal_triple(self):
        vals = evaluate_on_grid([1.0], [Atom(0.0, 1.0)], [-1.0, 0.0, 1.0])
        np.testing.assert_allclose(
            vals, [0.2419707245, 0.3989422804, 0.2419707245], atol=1e-9
        )

    def test_unsorted_grid_rejected(self):
        with pytest.raises(ValueError):
            evaluate_on_grid([1.0], [Atom(0.0, 1.0)], [0.0, -1.0, 1.0])
        with pytest.raises(ValueError):
            evaluate_on_grid([1.0], [Atom(0.0, 1.0)], [])

    def test_zero_measure_rejected(self):
        with pytest.raises(ValueError):
            evaluate_on_grid([0.0, 0.0], [Atom(0.0, 1.0), Atom(1.0, 1.0)], [0.0])

    def test_riemann_mass(self):
        """Riemann sum over a wide grid recovers the (unnormalized) total mass."""
        atoms = [Atom(-2.0, 1.0), Atom(3.0, 2.0)]
        weights = [1.7, 0.8]
        grid = np.linspace(-30.0, 30.0, 60_001)
        vals = evaluate_on_grid(weights, atoms, grid)
        mass = float(np.sum(vals)) * (grid[1] - grid[0])
        assert mass == pytest.approx(2.5, abs=1e-3)


class TestGramMatrix:
    def test_single_atom_identity_transform(self):
        corm = TruncatedCoRM(
            atoms=(Atom(0.0, 1.0),), jumps=np.array([1.0]), scores=np.array([[1.0]])
        )
        g = gram_matrix(corm, np.eye(1))
        assert g.shape == (1, 1)
        assert g[0, 0] == pytest.approx(HALF_ROOT_PI_INV, abs=1e-15)

    def test_matches_quadrature_small_instances(self):
        """Every Gram entry is the grid integral of the two factor densities."""
        rng = np.random.default_rng(11)
        for _ in range(8):
            corm = random_corm(rng, n_factors=3, n_atoms=4)
            g = gram_matrix(corm)
            for i in range(3):
                wi, mi, vi = corm_as_mixture_args(corm, i)
                for j in range(i, 3):
                    wj, mj, vj = corm_as_mixture_args(corm, j)
                    oracle = quad_inner(wi, mi, vi, wj, mj, vj)
                    assert g[i, j] == pytest.approx(oracle, rel=1e-6, abs=1e-9)

    def test_transform_route(self):
        rng = np.random.default_rng(12)
        corm = random_corm(rng, n_factors=3, n_atoms=5)
        q = rng.normal(size=(3, 3))
        b = (q @ corm.scores) * corm.jumps
        expected = b @ atom_inner_matrix(corm.atoms) @ b.T
        np.testing.assert_allclose(gram_matrix(corm, q), expected, rtol=1e-12)

    def test_symmetric_psd(self):
        rng = np.random.default_rng(13)
        for _ in range(10):
            corm = random_corm(rng, n_factors=4, n_atoms=6)
            g = gram_matrix(corm, rng.normal(size=(4, 4)))
            assert np.array_equal(g, g.T)
            assert np.linalg.eigvalsh(g).min() >= -1e-10


class TestGroupWeights:
    def test_values_and_totals(self):
        rng = np.random.default_rng(19)
        corm = random_corm(rng, n_factors=2, n_atoms=4)
        lam = rng.uniform(0.2, 2.0, size=(5, 2))
        weights, totals = group_weights(lam, corm)
        expected = (lam @ corm.scores) * corm.jumps
        np.testing.assert_array_equal(weights, expected)
        for j in range(5):
            assert totals[j] == math.fsum(weights[j])
        assert np.all(weights > 0.0) and np.all(totals > 0.0)

    def test_validation(self):
        rng = np.random.default_rng(20)
        corm = random_corm(rng, n_factors=2, n_atoms=3)
        with pytest.raises(ValueError):
            group_weights(np.ones((4, 3)), corm)  # factor mismatch
        with pytest.raises(ValueError):
            group_weights(np.zeros((4, 2)), corm)  # nonpositive


class TestTruncatedCoRM:
    def test_validation(self):
        atom = Atom(0.0, 1.0)
        with pytest.raises(ValueError):
            TruncatedCoRM(atoms=(atom,), jumps=np.array([0.5, 0.5]), scores=np.ones((1, 1)))
        with pytest.raises(ValueError):
            TruncatedCoRM(atoms=(atom,), jumps=np.array([0.0]), scores=np.ones((1, 1)))
        with pytest.raises(ValueError):
            TruncatedCoRM(atoms=(atom,), jumps=np.array([0.5]), scores=np.zeros((1, 1)))
        with pytest.raises(ValueError):
            TruncatedCoRM(
                atoms=(atom,), jumps=np.array([math.nan]), scores=np.ones((1, 1))
            )

    def test_arrays_frozen(self):
        corm = TruncatedCoRM(
            atoms=(Atom(0.0, 1.0),), jumps=np.array([0.5]), scores=np.array([[1.0]])
        )
        with pytest.raises(ValueError):
            corm.jumps[0] = 0.9
        np.testing.assert_array_equal(corm.factor_weights(), [[0.5]])

    def test_atom_vectors(self):
        atoms = (Atom(-1.0, 2.0), Atom(3.0, 0.5))
        corm = TruncatedCoRM(atoms=atoms, jumps=np.array([0.5, 0.5]), scores=np.ones((1, 2)))
        np.testing.assert_array_equal(corm.atom_means, [-1.0, 3.0])
        np.testing.assert_array_equal(corm.atom_vars, [2.0, 0.5])
        assert corm.n_atoms == 2 and corm.n_factors == 1

    def test_atom_validation(self):
        with pytest.raises(ValueError):
            Atom(0.0, 0.0)
        with pytest.raises(ValueError):
            Atom(math.inf, 1.0)


class TestDensityGrid:
    def test_for_data_span_and_size(self):
        class Stub:
            groups = (np.array([0.0, 4.0]), np.array([2.0]))

        pts = DensityGrid.for_data(Stub(), n_points=100)
        assert pts.shape == (100,)
        sd = np.std([0.0, 4.0, 2.0])
        assert pts[0] == pytest.approx(0.0 - 3.0 * sd)
        assert pts[-1] == pytest.approx(4.0 + 3.0 * sd)
        assert np.all(np.diff(pts) > 0)

    def test_default_500_points(self):
        class Stub:
            groups = (np.array([-1.0, 1.0]),)

        assert DensityGrid.for_data(Stub()).shape == (500,)

    def test_validation(self):
        with pytest.raises(ValueError):
            DensityGrid(points=np.array([0.0, 0.0]), values=np.ones((1, 2)), names=("a",))
        with pytest.raises(ValueError):
            DensityGrid(
                points=np.array([0.0, 1.0]),
                values=np.array([[1.0, math.nan]]),
                names=("a",),
            )

    def test_csv_round_shape(self, tmp_path):
        grid = DensityGrid(
            points=np.array([0.0, 0.5, 1.0]),
            values=np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]),
            names=("first", "second"),
        )
        out = tmp_path / "grid.csv"
        grid.write_csv(out)
        text = out.read_text(encoding="utf-8")
        lines = text.strip().split("\n")
        assert lines[0] == "y,first,second"
        assert len(lines) == 4
        assert "\r" not in text
