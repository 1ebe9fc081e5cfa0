import numpy as np
import pytest

from kahlerlab.curves import (CurveSample, energy_drift, hplanarity_defect,
                              integrate_hplanar, integrate_hplanar_batch,
                              killing_integral_drift, line_deviation,
                              reparametrization_invariance_check,
                              rk4_order_ratio)
from kahlerlab.errors import (InvalidInputError, OutOfDomainError,
                              UnsupportedModelError)
from kahlerlab.models import ChartPoint, flat_model


def test_flat_straight_line(flat2):
    x0 = flat2.point([0.1, 0.2, -0.3, 0.4])
    v0 = np.array([0.3, -0.2, 0.5, 0.1])
    c = integrate_hplanar(flat2, x0, v0, 0.0, 0.0, 1.0, 1e-2)
    assert np.max(np.abs(c.points[-1].coords - (x0.coords + v0))) < 1e-10
    assert line_deviation(flat2, c, x0, v0) < 1e-10


def test_flat_complex_line_membership(flat2):
    x0 = flat2.point([0.0, 0.0, 0.2, -0.1])
    v0 = np.array([1.0, 0.5, -0.2, 0.3])
    c = integrate_hplanar(flat2, x0, v0, alpha=0.2, beta=0.8, t_end=1.0, step=1e-3)
    assert line_deviation(flat2, c, x0, v0) < 1e-8
    assert np.nanmax(hplanarity_defect(flat2, c)) < 1e-6


def test_fs_curves_stay_on_projective_line(fs2, rng):
    for _ in range(3):
        x0 = fs2.point(rng.uniform(-0.3, 0.3, 4))
        v0 = rng.uniform(-0.7, 0.7, 4)
        c = integrate_hplanar(fs2, x0, v0, alpha=lambda t: 0.2 * np.sin(t),
                              beta=lambda t: 0.3 * np.cos(2 * t),
                              t_end=1.0, step=2e-3)
        assert line_deviation(fs2, c, x0, v0) < 1e-6
        assert np.nanmax(hplanarity_defect(fs2, c)) < 1e-6


def test_geodesics_are_planar_and_conserve_energy(fs2, rng):
    x0 = fs2.point(rng.uniform(-0.3, 0.3, 4))
    v0 = rng.uniform(-0.8, 0.8, 4)
    c = integrate_hplanar(fs2, x0, v0, 0.0, 0.0, 1.0, 1e-3)
    assert line_deviation(fs2, c, x0, v0) < 1e-8
    assert energy_drift(fs2, c) < 1e-8


def test_non_planar_curve_detected(fs2):
    ts = np.arange(0, 1.0001, 1e-3)
    pts = [ChartPoint("c0", np.array([np.sin(t), t, 0.3 * np.cos(2 * t), 0.1 * t]))
           for t in ts]
    vels = [np.array([np.cos(t), 1.0, -0.6 * np.sin(2 * t), 0.1]) for t in ts]
    bad = CurveSample(ts, pts, vels)
    assert np.nanmax(hplanarity_defect(fs2, bad)) > 1e-3
    assert line_deviation(fs2, bad, pts[0], vels[0]) > 1e-3
    passed, d1, d2 = reparametrization_invariance_check(fs2, bad)
    assert passed and d1 > 1e-3 and d2 > 1e-3


def test_reparametrization_invariance_planar(fs2, rng):
    x0 = fs2.point(rng.uniform(-0.2, 0.2, 4))
    v0 = rng.uniform(-0.6, 0.6, 4)
    c = integrate_hplanar(fs2, x0, v0, 0.1, 0.4, 1.0, 1e-3)
    passed, d1, d2 = reparametrization_invariance_check(fs2, c)
    assert passed and d1 < 1e-6 and d2 < 1e-6
    line = integrate_hplanar(flat_model(2), flat_model(2).point([0.0] * 4),
                             np.array([1.0, 0, 0, 0]), 0.0, 0.0, 1.0, 1e-2)
    passed, d1, d2 = reparametrization_invariance_check(flat_model(2), line)
    assert passed and d1 < 1e-8


def test_batch_integration_matches_single(fs2, rng):
    x0 = fs2.point([0.1, -0.05, 0.2, 0.0])
    v0 = np.array([0.5, 0.2, -0.1, 0.3])
    single = integrate_hplanar(fs2, x0, v0, 0.2, -0.3, 1.0, 2e-3)
    batch = integrate_hplanar_batch(fs2, [x0], [v0], [0.2], [-0.3], 1.0, 2e-3)[0]
    assert np.max(np.abs(single.points[-1].coords - batch.points[-1].coords)) < 1e-12


def test_killing_integral_drift(fs2, pair_sol, rng):
    vf = lambda pt: pair_sol.lambda_bar_vector_at(pt)
    x0 = fs2.point(rng.uniform(-0.2, 0.2, 4))
    v0 = rng.uniform(-0.7, 0.7, 4)
    geo = integrate_hplanar(fs2, x0, v0, 0.0, 0.0, 1.0, 2e-3)
    assert killing_integral_drift(fs2, geo, vf, stride=20) < 1e-7
    assert killing_integral_drift(fs2, geo, lambda pt: np.zeros(4)) == 0.0
    # a gradient field is not Killing: visible drift
    vf2 = lambda pt: pair_sol.lambda_vector_at(pt)
    assert killing_integral_drift(fs2, geo, vf2, stride=20) > 1e-4


def test_rk4_order(fs2, rng):
    ratio = rk4_order_ratio(fs2, fs2.point([0.1, 0.0, -0.1, 0.2]),
                            np.array([0.5, -0.3, 0.2, 0.4]), 0.1, 0.2, 0.5, 4e-3)
    assert 12.0 <= ratio <= 20.0


def test_chart_switching_long_geodesic(fs2):
    c = integrate_hplanar(fs2, fs2.point([0.0] * 4), np.array([1.2, 0, 0, 0]),
                          0.0, 0.0, 3.0, 1e-3)
    assert {p.chart for p in c.points} == {"c0", "c1"}
    assert energy_drift(fs2, c) < 1e-8


def test_out_of_domain(flat2):
    with pytest.raises(OutOfDomainError) as err:
        integrate_hplanar(flat2, flat2.point([0.0] * 4),
                          np.array([30.0, 0, 0, 0]), 0.0, 0.0, 1.0, 1e-2)
    assert err.value.last_sample is not None


def test_torus_wrapping_keeps_curve_inside(torus2):
    c = integrate_hplanar(torus2, torus2.point([0.0] * 4),
                          np.array([1.0, 0.3, 0.0, 0.0]), 0.0, 0.0, 2.0, 1e-2)
    coords = np.stack([p.coords for p in c.points])
    assert np.max(np.abs(coords)) <= 0.5 + 1e-12


def test_line_deviation_unsupported_model(torus2):
    c = integrate_hplanar(torus2, torus2.point([0.0] * 4),
                          np.array([0.3, 0.0, 0.0, 0.0]), 0.0, 0.0, 1.0, 1e-2)
    with pytest.raises(UnsupportedModelError):
        line_deviation(torus2, c, c.points[0], c.velocities[0])


def test_curve_sample_validation_and_csv(tmp_path, flat2):
    with pytest.raises(InvalidInputError):
        CurveSample([0.0, 0.0], [None, None], [None, None])
    c = integrate_hplanar(flat2, flat2.point([0.0] * 4),
                          np.array([1.0, 0, 0, 0]), 0.0, 0.0, 0.1, 1e-2)
    path = tmp_path / "curve.csv"
    c.export_csv(path, extras={"defect": np.zeros(len(c))})
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "t,chart,x0,x1,x2,x3,v0,v1,v2,v3,defect"
    assert len(lines) == len(c) + 1


def test_invalid_inputs(flat2):
    with pytest.raises(InvalidInputError):
        integrate_hplanar(flat2, flat2.point([0.0] * 4), np.zeros(4))
    with pytest.raises(InvalidInputError):
        integrate_hplanar(flat2, flat2.point([0.0] * 4), np.ones(4), step=-1.0)


def test_poly_coefficient_builtin(fs2, rng):
    from kahlerlab.curves import poly_coefficient
    beta = poly_coefficient(0.1, -0.4, 0.2)
    assert abs(beta(0.5) - (0.1 - 0.2 + 0.05)) < 1e-15
    x0 = fs2.point(rng.uniform(-0.2, 0.2, 4))
    v0 = rng.uniform(-0.5, 0.5, 4)
    c = integrate_hplanar(fs2, x0, v0, poly_coefficient(0.2, 0.1), beta, 0.5, 2e-3)
    assert line_deviation(fs2, c, x0, v0) < 1e-7
