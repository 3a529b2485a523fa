import math

import numpy as np

from scengen.geometry import OrientedRect, rect_min_distance, rect_overlap

from oracles import min_distance_by_discretization, overlap_by_sampling, sat_margin


def random_rect(rng):
    return OrientedRect(
        cx=float(rng.uniform(-10, 10)),
        cy=float(rng.uniform(-10, 10)),
        half_len=float(rng.uniform(0.5, 4.0)),
        half_wid=float(rng.uniform(0.3, 2.0)),
        angle=float(rng.uniform(-math.pi, math.pi)),
    )


def test_overlap_hand_cases():
    a = OrientedRect(0.0, 0.0, 2.5, 1.0, 0.0)
    b = OrientedRect(4.0, 0.0, 2.5, 1.0, 0.0)
    assert rect_overlap(a, b)  # 5 m bodies 4 m apart
    far = OrientedRect(6.0, 0.0, 2.5, 1.0, 0.0)
    assert not rect_overlap(a, far)
    assert rect_min_distance(a, far) == 1.0
    # shared edge counts as contact
    touch = OrientedRect(5.0, 0.0, 2.5, 1.0, 0.0)
    assert rect_overlap(a, touch)
    assert rect_min_distance(a, touch) == 0.0


def test_rotated_crossing():
    # two long thin bars crossing at 90 degrees through the origin
    a = OrientedRect(0.0, 0.0, 4.0, 0.2, 0.0)
    b = OrientedRect(0.0, 0.0, 4.0, 0.2, math.pi / 2.0)
    assert rect_overlap(a, b)
    # slide one bar sideways past the other's tip
    c = OrientedRect(5.0, 0.0, 4.0, 0.2, math.pi / 2.0)
    assert not rect_overlap(a, c)
    assert abs(rect_min_distance(a, c) - 0.8) < 1e-12


def test_symmetry_and_zero_iff_overlap():
    rng = np.random.default_rng(7)
    for _ in range(300):
        a = random_rect(rng)
        b = random_rect(rng)
        assert rect_overlap(a, b) == rect_overlap(b, a)
        d_ab = rect_min_distance(a, b)
        d_ba = rect_min_distance(b, a)
        assert abs(d_ab - d_ba) < 1e-12
        assert (d_ab == 0.0) == rect_overlap(a, b)


def test_rigid_motion_invariance():
    rng = np.random.default_rng(11)
    for _ in range(100):
        a = random_rect(rng)
        b = random_rect(rng)
        d0 = rect_min_distance(a, b)
        tx, ty = rng.uniform(-5, 5, size=2)
        phi = float(rng.uniform(-math.pi, math.pi))
        c, s = math.cos(phi), math.sin(phi)

        def moved(r):
            x = c * r.cx - s * r.cy + tx
            y = s * r.cx + c * r.cy + ty
            return OrientedRect(x, y, r.half_len, r.half_wid, r.angle + phi)

        d1 = rect_min_distance(moved(a), moved(b))
        assert abs(d0 - d1) < 1e-9


def test_overlap_against_sampling_oracle():
    rng = np.random.default_rng(3)
    checked = 0
    while checked < 200:
        a = random_rect(rng)
        b = random_rect(rng)
        if abs(sat_margin(a, b)) < 1e-3:
            continue
        assert rect_overlap(a, b) == overlap_by_sampling(a, b), (a, b)
        checked += 1


def test_min_distance_against_discretization_oracle():
    rng = np.random.default_rng(5)
    checked = 0
    while checked < 120:
        a = random_rect(rng)
        b = random_rect(rng)
        if rect_overlap(a, b):
            continue
        d = rect_min_distance(a, b)
        est = min_distance_by_discretization(a, b, step=1e-3)
        assert abs(d - est) <= 1e-3, (d, est)
        assert d <= est + 1e-12  # sampled estimate can only overshoot
        checked += 1


def test_containment():
    outer = OrientedRect(0.0, 0.0, 5.0, 3.0, 0.3)
    inner = OrientedRect(0.2, -0.1, 0.5, 0.2, 1.1)
    assert rect_overlap(outer, inner)
    assert rect_overlap(inner, outer)
    assert rect_min_distance(outer, inner) == 0.0


def test_corners_order_and_circumradius():
    r = OrientedRect(1.0, 2.0, 2.0, 1.0, 0.0)
    got = r.corners()
    want = np.array([[3.0, 3.0], [-1.0, 3.0], [-1.0, 1.0], [3.0, 1.0]])
    assert np.allclose(got, want)
    assert abs(r.circumradius - math.hypot(2.0, 1.0)) < 1e-15
