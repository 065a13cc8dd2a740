import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from wel.errors import InvalidArgument
from wel.grid import build_disk, build_rectangle
from wel.inequalities import bump
from wel.weights import (constant_weight, estimate_kappa, green_exponential_weight, green_function,
                         locate_critical_points, parse_weight_shorthand, power_product_weight,
                         sampled_weight, weak_equation_residual, weight_from_descriptor)

DISK = build_disk((0, 0), 1.0, h=1 / 64)


def test_power_weight_offsets_node_singularity():
    w = power_product_weight([(0, 0)], [1.0], DISK)
    (px, py), = w.singular_points
    assert (px, py) == (DISK.h / 2, DISK.h / 2)
    assert w.provenance["offset"] == [True]
    np.testing.assert_allclose(w.omega, np.hypot(DISK.x - px, DISK.y - py))
    assert w.kappa_is_zero and w.critical_points == []
    assert w.singular_region().sum() == 4
    assert not w.singular_nodes.any()


def test_power_weight_gradient_matches_differences():
    w = power_product_weight([(0.1, -0.2), (1.0, 0.0)], [0.5, 1.5], DISK)
    gx, gy = np.gradient(w.omega, DISK.h)
    far = (np.hypot(DISK.x - 0.1, DISK.y + 0.2) > 0.2) & (np.hypot(DISK.x - 1, DISK.y) > 0.2) & DISK.interior_mask
    assert np.max(np.abs(gx - w.grad_omega[0])[far]) < 5e-3
    assert np.max(np.abs(gy - w.grad_omega[1])[far]) < 5e-3


def test_two_point_critical_point():
    w = power_product_weight([(0, 0), (1, 0)], [1.0, 1.0], DISK)
    assert len(w.critical_points) == 1
    cx, cy = w.critical_points[0]
    # both poles sit on nodes and move by (h/2, h/2); equal exponents put the critical point midway
    assert cx == pytest.approx(0.5 + DISK.h / 2, abs=1e-12) and cy == pytest.approx(DISK.h / 2, abs=1e-12)
    region = w.critical_region()
    i, j = DISK.index_of((cx, cy))
    assert region[i, j] and region.sum() == 4


@given(st.lists(st.tuples(st.floats(-0.7, 0.7), st.floats(-0.7, 0.7)), min_size=2, max_size=4, unique=True),
       st.lists(st.floats(0.3, 3.0), min_size=4, max_size=4))
def test_critical_points_are_zeros_of_log_gradient(points, alphas):
    zs = np.array([complex(*p) for p in points])
    if min(abs(a - b) for i, a in enumerate(zs) for b in zs[i + 1:]) < 1e-2:
        return
    w = power_product_weight(points, alphas[: len(points)], DISK)
    pts = np.array([complex(*p) for p in w.singular_points])
    for c in w.critical_points:
        z = complex(*c)
        g = sum(a / np.conj(z - p) for a, p in zip(alphas, pts))
        scale = sum(a / abs(z - p) for a, p in zip(alphas, pts))
        assert abs(g) <= 1e-8 * scale


def test_power_weight_validation():
    with pytest.raises(InvalidArgument):
        power_product_weight([(0, 0)], [0.0], DISK)
    with pytest.raises(InvalidArgument):
        power_product_weight([(3, 0)], [1.0], DISK)
    with pytest.raises(InvalidArgument):
        power_product_weight([(0, 0)], [1.0, 2.0], DISK)


def test_green_function_has_unit_mass_and_log_singularity():
    g = build_disk((0, 0), 1.0, h=1 / 128)
    G = green_function(g, (0, 0))
    assert G.max() == G[g.index_of((0, 0))]
    r = np.hypot(g.x, g.y)
    ring = (r > 0.2) & (r < 0.8) & g.interior_mask
    np.testing.assert_allclose(G[ring], -np.log(r[ring]) / (2 * np.pi), rtol=0, atol=2e-3)
    with pytest.raises(InvalidArgument):
        green_function(g, (0.999, 0.0))


def test_green_exponential_weight():
    g = build_disk((0, 0), 1.0, h=1 / 128)
    w = green_exponential_weight([(0, 0)], [2 * np.pi], g)
    r = np.hypot(g.x, g.y)
    ring = (r > 10 * g.h) & (r < 1 - 10 * g.h) & g.interior_mask
    assert np.max(np.abs(w.omega[ring] / r[ring] - 1)) < 0.02
    assert w.singular_points == [(0.0, 0.0)]
    empty = green_exponential_weight([], [], g)
    assert np.all(empty.omega == 1.0)


def test_constant_weight_and_scaling():
    w = constant_weight(DISK, 2.0)
    assert w.sup_omega() == 2.0 and w.critical_points == []
    assert w.critical_nodes.all()
    s = power_product_weight([(0, 0)], [1.0], DISK).scaled(3.0)
    assert s.provenance["scale"] == 3.0
    with pytest.raises(InvalidArgument):
        s.scaled(-1.0)
    with pytest.raises(InvalidArgument):
        constant_weight(DISK, 0.0)


def test_locate_critical_points_on_saddle():
    g = build_rectangle((-1, -1), (2, 2), h=0.1)
    grad = np.stack([g.x - 0.33, -(g.y + 0.21)])
    pts = locate_critical_points(g, grad)
    assert len(pts) == 1
    assert abs(pts[0][0] - 0.33) <= g.h and abs(pts[0][1] + 0.21) <= g.h
    assert locate_critical_points(g, grad, singular_points=[(0.33, -0.21)]) == []


def test_kappa_estimate_for_gaussian():
    g = build_disk((0, 0), 1.0, h=1 / 64)
    k = 1.7
    omega = np.exp(-0.5 * k * (g.x**2 + g.y**2))
    kap = estimate_kappa(g, omega)
    np.testing.assert_allclose(kap[g.interior_mask], 2 * k, rtol=1e-9)
    w = sampled_weight(g, omega, kappa="field")
    assert w.provenance["kappa"] == "field" and not w.kappa_is_zero
    with pytest.raises(InvalidArgument):
        sampled_weight(g, omega, kappa="guess")
    with pytest.raises(InvalidArgument):
        estimate_kappa(g, np.zeros(g.shape))


def test_weak_residual_constant_weight_is_exactly_zero():
    f = bump(DISK, (0.2, 0.1), 0.4)
    assert weak_equation_residual(constant_weight(DISK, 1.3), f).value == 0.0


def test_weak_residual_exponential_weight_cancels_exactly():
    # w = e^x: centered |grad w|^2 = e^(2x) sinh(h)^2/h^2 and Delta_5 e^(2x) = e^(2x) (2 cosh 2h - 2)/h^2,
    # and 2 cosh 2h - 2 = 4 sinh^2 h, so the discrete residual vanishes up to rounding
    for n in (32, 64, 128):
        g = build_disk((0, 0), 1.0, h=1 / n)
        w = sampled_weight(g, np.exp(g.x), kappa=0.0)
        f = bump(g, (0.2, 0.1), 0.5)
        assert abs(weak_equation_residual(w, f).value) < 1e-11
        # a non-harmonic log (kappa != 0 omitted) is clearly detected
        bad = sampled_weight(g, np.exp(g.x**2), kappa=0.0)
        assert abs(weak_equation_residual(bad, f).value) > 1e-3


def test_weak_residual_with_kappa_field():
    g = build_disk((0, 0), 1.0, h=1 / 64)
    omega = np.exp(-0.5 * (g.x**2 + g.y**2))
    w = sampled_weight(g, omega, kappa="field")
    wrong = weak_equation_residual(w, bump(g, (0.1, 0.1), 0.5), kappa=0.0).value
    right = weak_equation_residual(w, bump(g, (0.1, 0.1), 0.5)).value
    assert abs(right) < 1e-2 * abs(wrong)


def test_weak_residual_requires_compact_support():
    with pytest.raises(InvalidArgument):
        weak_equation_residual(constant_weight(DISK), np.ones(DISK.shape))


def test_weak_residual_trust_flag():
    w = power_product_weight([(0, 0)], [1.0], DISK)
    assert not weak_equation_residual(w, bump(DISK, (0.0, 0.0), 0.3)).trusted
    assert weak_equation_residual(w, bump(DISK, (0.5, 0.0), 0.3)).trusted


@given(st.floats(0.1, 10.0))
def test_weak_residual_scales_with_weight_squared(c):
    w = power_product_weight([(0, 0)], [1.0], DISK)
    f = bump(DISK, (0.4, 0.2), 0.3)
    base = weak_equation_residual(w, f).value
    assert weak_equation_residual(w.scaled(c), f).value == pytest.approx(c**2 * base, rel=1e-9)


def test_descriptors():
    w = weight_from_descriptor({"family": "power_product", "points": [[0, 0]], "alphas": [0.5]}, DISK)
    np.testing.assert_allclose(w.omega**2, np.hypot(DISK.x - DISK.h / 2, DISK.y - DISK.h / 2))
    assert weight_from_descriptor({"family": "constant", "value": 2}, DISK).omega.max() == 2
    for bad in ({"family": "power_product", "colour": 1}, {"family": "exotic"}, {"points": []}, "x"):
        with pytest.raises(InvalidArgument):
            weight_from_descriptor(bad, DISK)
    with pytest.raises(InvalidArgument):
        weight_from_descriptor({"family": "sampled"}, DISK)


def test_sampled_descriptor_from_csv(tmp_path):
    from wel.calculus import field_to_csv

    omega = np.exp(DISK.x)
    field_to_csv(DISK, omega, tmp_path / "w.csv")
    w = weight_from_descriptor({"family": "sampled", "samples": str(tmp_path / "w.csv"), "kappa": 0.0}, DISK)
    np.testing.assert_array_equal(w.omega, omega)


@pytest.mark.parametrize("text,alpha", [("|x|", 1.0), ("|x|^0.5", 0.5), ("|x|^(2)", 2.0), (" |x| ^ .25", 0.25)])
def test_shorthand_powers(text, alpha):
    d = parse_weight_shorthand(text)
    assert d == {"family": "power_product", "points": [[0.0, 0.0]], "alphas": [alpha]}


def test_shorthand_other():
    assert parse_weight_shorthand("|x||x-e1|")["points"] == [[0.0, 0.0], [1.0, 0.0]]
    assert parse_weight_shorthand("1")["family"] == "constant"
    assert parse_weight_shorthand('{"family": "constant"}') == {"family": "constant"}
    for bad in ("{bad", "sin(x)"):
        with pytest.raises(InvalidArgument):
            parse_weight_shorthand(bad)
