import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from singular_obstacle.grid import (
    Domain,
    GridField,
    discrete_gradient,
    interpolate,
    make_grid,
    mean_gradient_on_ball,
    oscillation_integral,
    read_field_csv,
    sup_on_ball,
    write_field_csv,
)


def field(grid, fn):
    return GridField(grid, fn(grid.coords))


class TestMakeGrid:
    def test_interval_counts(self):
        g = make_grid(Domain.interval(-1, 1), 0.5)
        assert g.n_active == 5
        assert g.boundary_mask.sum() == 2

    def test_rectangle_counts(self):
        g = make_grid(Domain.rectangle(0, 1, 0, 1), 0.5)
        assert g.n_active == 9
        assert g.boundary_mask.sum() == 8

    def test_disc_interior_is_point_in_disc(self):
        g = make_grid(Domain.disc(1.0), 0.4)
        inside = np.linalg.norm(g.coords, axis=1) <= 1 + 1e-12
        np.testing.assert_array_equal(g.interior_mask, inside)
        ax = 0.4 * np.arange(-3, 4)
        X, Y = np.meshgrid(ax, ax, indexing="ij")
        assert g.interior_mask.sum() == int((X ** 2 + Y ** 2 <= 1 + 1e-12).sum())
        # the Dirichlet ring sits outside the disc, within one diagonal step
        r_bd = np.linalg.norm(g.coords[g.boundary_mask], axis=1)
        assert np.all(r_bd > 1) and np.all(r_bd <= 1 + 0.4 * np.sqrt(2) + 1e-12)

    def test_h_too_large(self):
        with pytest.raises(ValueError):
            make_grid(Domain.interval(0, 1), 0.75)

    def test_h_not_dividing(self):
        with pytest.raises(ValueError):
            make_grid(Domain.interval(0, 1), 0.3)

    def test_bad_domains(self):
        with pytest.raises(ValueError):
            Domain.interval(1, 0)
        with pytest.raises(ValueError):
            Domain.disc(-1)

    def test_domain_roundtrip(self):
        for d in (Domain.interval(-1, 2), Domain.rectangle(0, 1, -1, 1), Domain.disc(2.0)):
            assert Domain.from_dict(d.to_dict()) == d


class TestGridField:
    def test_length_checked(self):
        g = make_grid(Domain.interval(0, 1), 0.25)
        with pytest.raises(ValueError):
            GridField(g, np.zeros(3))

    def test_finite(self):
        g = make_grid(Domain.interval(0, 1), 0.25)
        with pytest.raises(ValueError):
            GridField(g, np.full(5, np.nan))

    def test_csv_roundtrip(self, tmp_path):
        g = make_grid(Domain.rectangle(0, 1, 0, 1), 0.25)
        f = field(g, lambda x: np.sin(x[:, 0]) + x[:, 1] / 3)
        write_field_csv(tmp_path / "f.csv", f)
        back = read_field_csv(tmp_path / "f.csv", g)
        np.testing.assert_array_equal(back.values, f.values)
        assert (tmp_path / "f.csv").read_text().splitlines()[0] == "x1,x2,value"


class TestDiscreteGradient:
    def test_affine_exact(self):
        g = make_grid(Domain.rectangle(0, 1, 0, 1), 0.125)
        _, grads = discrete_gradient(field(g, lambda x: 3 * x[:, 0] - 2 * x[:, 1]))
        np.testing.assert_allclose(grads, np.tile([3.0, -2.0], (len(grads), 1)), atol=1e-12)

    def test_constant_zero(self):
        g = make_grid(Domain.disc(1.0), 0.25)
        _, grads = discrete_gradient(GridField(g, np.full(g.n_active, 7.0)))
        assert np.all(grads == 0)

    def test_forward_differences_of_square(self):
        g = make_grid(Domain.interval(0, 1), 0.25)
        centers, grads = discrete_gradient(field(g, lambda x: x[:, 0] ** 2))
        np.testing.assert_allclose(grads[:, 0], [0.25, 0.75, 1.25, 1.75])
        np.testing.assert_allclose(centers[:, 0], [0.125, 0.375, 0.625, 0.875])

    @settings(max_examples=25, deadline=None)
    @given(st.floats(-5, 5), st.floats(-5, 5))
    def test_linear(self, a, b):
        g = make_grid(Domain.interval(0, 1), 0.125)
        f1 = field(g, lambda x: np.sin(3 * x[:, 0]))
        f2 = field(g, lambda x: x[:, 0] ** 3)
        _, g1 = discrete_gradient(f1)
        _, g2 = discrete_gradient(f2)
        _, g12 = discrete_gradient(GridField(g, a * f1.values + b * f2.values))
        np.testing.assert_allclose(g12, a * g1 + b * g2, atol=1e-9)


class TestBallOperators:
    def test_sup_zero(self):
        g = make_grid(Domain.interval(-1, 1), 0.1)
        assert sup_on_ball(GridField(g, np.zeros(g.n_active)), [0.0], 0.5) == 0

    def test_sup_abs(self):
        g = make_grid(Domain.interval(-1, 1), 0.125)
        f = field(g, lambda x: np.abs(x[:, 0]))
        assert sup_on_ball(f, [0.0], 0.5) == pytest.approx(0.5)
        assert sup_on_ball(f, [0.0], 0.3) == pytest.approx(0.25)

    def test_sup_square(self):
        g = make_grid(Domain.interval(-1, 1), 0.01)
        f = field(g, lambda x: x[:, 0] ** 2)
        assert abs(sup_on_ball(f, [0.0], 0.3) - 0.09) <= 2 * 0.3 * 0.01

    def test_sup_monotone_in_rho(self):
        g = make_grid(Domain.rectangle(-1, 1, -1, 1), 0.0625)
        f = field(g, lambda x: np.sin(5 * x[:, 0]) * np.cos(3 * x[:, 1]))
        vals = [sup_on_ball(f, [0.1, -0.2], r) for r in np.linspace(0.1, 0.7, 13)]
        assert np.all(np.diff(vals) >= 0)

    def test_sup_empty_ball(self):
        g = make_grid(Domain.interval(-1, 1), 0.5)
        f = GridField(g, np.zeros(g.n_active))
        with pytest.raises(ValueError):
            sup_on_ball(f, [0.25], 0.1)

    def test_affine_oscillation_zero(self):
        g = make_grid(Domain.rectangle(-1, 1, -1, 1), 0.0625)
        f = field(g, lambda x: 2 * x[:, 0] + 5 * x[:, 1] - 1)
        for q in (1.0, 2.0, 3.0):
            assert oscillation_integral(f, [0.0, 0.0], 0.5, q) == pytest.approx(0.0, abs=1e-20)

    def test_mean_gradient_symmetric(self):
        g = make_grid(Domain.interval(-1, 1), 0.01)
        f = field(g, lambda x: x[:, 0] ** 2 / 2)
        assert abs(mean_gradient_on_ball(f, [0.0], 0.5)[0]) <= 0.01

    def test_oscillation_of_parabola(self):
        g = make_grid(Domain.interval(-1, 1), 0.01)
        f = field(g, lambda x: x[:, 0] ** 2 / 2)
        assert oscillation_integral(f, [0.0], 0.5, 2) == pytest.approx(1 / 12, rel=0.02)

    def test_oscillation_affine_invariant(self):
        g = make_grid(Domain.interval(-1, 1), 0.02)
        f = field(g, lambda x: np.abs(x[:, 0]) ** 1.5)
        s = field(g, lambda x: 4 * x[:, 0] - 3)
        a = oscillation_integral(f, [0.0], 0.4, 2)
        b = oscillation_integral(GridField(g, f.values + s.values), [0.0], 0.4, 2)
        assert b == pytest.approx(a, rel=1e-9)

    def test_empty_ball_raises(self):
        g = make_grid(Domain.interval(-1, 1), 0.5)
        f = GridField(g, np.zeros(g.n_active))
        with pytest.raises(ValueError):
            oscillation_integral(f, [0.0], 0.1, 2)


def test_interpolate_is_exact_on_bilinear():
    g = make_grid(Domain.rectangle(0, 1, 0, 1), 0.25)
    f = field(g, lambda x: 1 + 2 * x[:, 0] - x[:, 1] + 0.5 * x[:, 0] * x[:, 1])
    pts = np.array([[0.1, 0.3], [0.77, 0.52]])
    exact = 1 + 2 * pts[:, 0] - pts[:, 1] + 0.5 * pts[:, 0] * pts[:, 1]
    np.testing.assert_allclose(interpolate(f, pts), exact, atol=1e-12)
