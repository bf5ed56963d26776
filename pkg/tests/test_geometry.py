"""Geometry: membership, normals, first hits and the reflection map.

Independent oracles: the 1-D folding map (period-4 triangle wave) and a
closed-form circle-chord ray tracer for the disk.
"""

import math

import numpy as np
import pytest

from pbsim import geometry as G
from pbsim.rng import RandomStream


def fold_interval(s, L=1.0):
    """Analytic reflected endpoint on [-L, L] for unfolded coordinate s."""
    m = (s + 3.0 * L) % (4.0 * L)
    return abs(m - 2.0 * L) - L


def trace_disk(x, k, R=1.0, max_bounce=10_000):
    """Closed-form chord ray tracer in the disk of radius R."""
    pos = np.array(x, dtype=float)
    norm = float(np.linalg.norm(k))
    if norm == 0.0:
        return pos, 0
    khat = np.array(k, dtype=float) / norm
    remaining = norm
    bounces = 0
    for _ in range(max_bounce):
        b = float(pos @ khat)
        c = float(pos @ pos) - R * R
        disc = b * b - c
        t_exit = -b + math.sqrt(max(disc, 0.0))
        if t_exit >= remaining:
            return pos + remaining * khat, bounces
        pos = pos + t_exit * khat
        remaining -= t_exit
        n = pos / float(np.linalg.norm(pos))
        khat = khat - 2.0 * float(khat @ n) * n
        khat /= float(np.linalg.norm(khat))
        bounces += 1
    raise RuntimeError("tracer did not terminate")


@pytest.fixture(scope="module")
def interval():
    return G.interval_domain(1.0)


@pytest.fixture(scope="module")
def disk():
    return G.ball_domain(1.0, 2)


def test_contains_examples(interval, disk):
    assert G.contains(disk, np.array([0.0, 0.0]))
    assert not G.contains(disk, np.array([2.0, 0.0]))
    assert G.contains(disk, np.array([1.0, 0.0]))  # closure point


def test_normal_examples(interval, disk):
    assert np.allclose(G.normal(disk, np.array([1.0, 0.0])), [1.0, 0.0])
    assert np.allclose(G.normal(disk, np.array([0.0, -1.0])), [0.0, -1.0])
    assert np.allclose(G.normal(interval, np.array([1.0])), [1.0])


def test_normal_degenerate_gradient(disk):
    with pytest.raises(G.DegenerateGradient):
        G.normal(disk, np.array([0.0, 0.0]))


def test_first_hit_examples(interval, disk):
    got = G.first_hit(interval, np.array([0.5]), np.array([1.0]), 1.0)
    assert abs(got - 0.5) <= interval.tol_hit * 10
    assert G.first_hit(interval, np.array([0.5]), np.array([-1.0]), 1.0) is None
    # chord root ||x + theta k|| = 1 from the centre
    got = G.first_hit(disk, np.array([0.0, 0.0]), np.array([1.0, 0.0]), 2.0)
    assert abs(got - 1.0) <= disk.tol_hit * 10


def test_first_hit_accuracy_contract(disk):
    rng = RandomStream(2)
    for _ in range(200):
        x = G.uniform_interior_points(disk, 1, rng)[0]
        v = rng.normal(2)
        khat = v / np.linalg.norm(v)
        theta = G.first_hit(disk, x, khat, 4.0)
        assert theta is not None  # length 4 always exits the unit disk
        assert abs(disk.omega1(x + theta * khat)) <= disk.tol_hit


def test_reflect_direction_examples():
    assert np.allclose(G.reflect_direction(np.array([0.0, -1.0]),
                                           np.array([0.0, -1.0])), [0.0, 1.0])
    assert np.allclose(G.reflect_direction(np.array([1.0, 0.0]),
                                           np.array([0.0, 1.0])), [1.0, 0.0])
    s = math.sqrt(2) / 2
    assert np.allclose(G.reflect_direction(np.array([s, -s]),
                                           np.array([0.0, -1.0])), [s, s])


def test_project_xi_examples(disk):
    # interior displacement needs no projection
    out = G.project_xi(disk, np.array([0.2, 0.0]), np.array([0.1, 0.0]))
    assert np.allclose(out, [0.3, 0.0])
    # zero displacement is the identity
    out = G.project_xi(disk, np.array([1.0, 0.0]), np.array([0.0, 0.0]))
    assert np.allclose(out, [1.0, 0.0])
    # tangential displacement from a boundary point: distance bound
    x = np.array([1.0, 0.0])
    k = np.array([0.0, 0.1])
    out = G.project_xi(disk, x, k)
    assert disk.omega1(out) <= disk.tol_boundary
    assert np.linalg.norm(x + k - out) <= 2.0 * disk.b0 * 0.01 + disk.tol_hit


def test_project_xi_rejects_outside_base_point(disk):
    with pytest.raises(G.ProjectionFailed):
        G.project_xi(disk, np.array([2.0, 0.0]), np.array([0.1, 0.0]))


def test_gamma_interior_segment_identity(disk):
    out = G.gamma(disk, np.array([0.0, 0.0]), np.array([0.5, 0.0]))
    assert np.allclose(out, [0.5, 0.0])


def test_gamma_one_reflection_hand_unrolled(interval):
    # from 0.5 travel +1.0: hit at 1 after 0.5, reverse, travel 0.5 back
    out = G.gamma(interval, np.array([0.5]), np.array([1.0]))
    assert abs(out[0] - 0.5) < 1e-9


def test_gamma_folding_oracle(interval):
    rng = RandomStream(99)
    worst = 0.0
    for _ in range(5000):
        x = 2.0 * rng.uniform() - 1.0
        k = 8.0 * (2.0 * rng.uniform() - 1.0)
        got = G.gamma(interval, np.array([x]), np.array([k]))[0]
        worst = max(worst, abs(got - fold_interval(x + k)))
    assert worst < 1e-9


def test_gamma_disk_tracer_oracle(disk):
    rng = RandomStream(7)
    worst = 0.0
    for _ in range(1500):
        x = G.uniform_interior_points(disk, 1, rng)[0]
        v = rng.normal(2)
        k = v * rng.uniform()
        expected, bounces = trace_disk(x, k)
        if bounces > 8:
            continue
        got = G.gamma(disk, x, k)
        worst = max(worst, float(np.linalg.norm(got - expected)))
    assert worst < 1e-7


def test_gamma_closure_property(disk, interval):
    rng = RandomStream(31)
    for dom, d in ((disk, 2), (interval, 1)):
        for _ in range(2000):
            x = G.uniform_interior_points(dom, 1, rng)[0]
            k = rng.normal(d) * dom.diameter
            out = G.gamma(dom, x, k)
            assert dom.omega1(out) <= dom.tol_boundary


def test_gamma_specularity(disk):
    rng = RandomStream(11)
    checked = 0
    for _ in range(400):
        x = G.uniform_interior_points(disk, 1, rng)[0]
        k = rng.normal(2) * 1.5
        bounces = []
        G.gamma(disk, x, k, bounces=bounces)
        for pos, k_in, k_out in bounces:
            n = G.normal(disk, pos)
            # normal component flips, tangential component is preserved
            assert abs(float(k_in @ n) + float(k_out @ n)) < 1e-9
            t_in = k_in - float(k_in @ n) * n
            t_out = k_out - float(k_out @ n) * n
            assert np.linalg.norm(t_in - t_out) < 1e-9
            checked += 1
    assert checked > 50


def test_gamma_batch_matches_scalar(disk, interval):
    rng = RandomStream(17)
    for dom, d in ((disk, 2), (interval, 1)):
        X = G.uniform_interior_points(dom, 500, rng)
        K = rng.normal((500, d)) * 0.8
        batch = G.gamma_batch(dom, X, K)
        for x, k, b in zip(X, K, batch):
            s = G.gamma(dom, x, k)
            assert np.linalg.norm(s - b) < 1e-9


def test_gamma_zero_displacement(disk):
    x = np.array([0.3, -0.2])
    assert np.allclose(G.gamma(disk, x, np.zeros(2)), x)


def test_reflection_cap_fallback_is_total(disk):
    # a huge displacement exceeds the cap; the result must stay inside
    stats = {}
    out = G.gamma(disk, np.array([0.5, 0.0]), np.array([500.0, 0.3]),
                  stats=stats)
    assert disk.omega1(out) <= disk.tol_boundary
    assert stats.get("cap_hits", 0) >= 1


def test_domain_constants(disk, interval):
    for dom in (disk, interval):
        assert dom.b0 == 0.5 * dom.hess_bound
        assert dom.a0 == 2.0 * dom.hess_bound
        assert 0.0 < dom.delta < 0.5 / dom.b0


def test_hess_bound_audit(disk, interval):
    rng = RandomStream(5)
    for dom in (disk, interval):
        worst = G.audit_hess_bound(dom, 100, rng)
        assert worst <= dom.hess_bound * (1.0 + 1e-6)


def test_box_smooth_domain_basics():
    dom = G.box_smooth_domain((1.0, 0.8), power=4)
    assert G.contains(dom, np.array([0.0, 0.0]))
    assert not G.contains(dom, np.array([1.05, 0.0]))
    rng = RandomStream(3)
    for _ in range(500):
        x = G.uniform_interior_points(dom, 1, rng)[0]
        k = rng.normal(2)
        out = G.gamma(dom, x, k)
        assert dom.omega1(out) <= dom.tol_boundary


def test_polynomial_domain_matches_interval():
    # omega = x^2 - 1 supplied as a coefficient table; non-convex code path
    dom = G.polynomial_domain({(2,): 1.0, (0,): -1.0}, dim=1,
                              bounding_box=[[-1.0], [1.0]])
    assert not dom.convex
    rng = RandomStream(13)
    analytic = G.interval_domain(1.0)
    for _ in range(800):
        x = 2.0 * rng.uniform() - 1.0
        k = 5.0 * (2.0 * rng.uniform() - 1.0)
        got = G.gamma(dom, np.array([x]), np.array([k]))[0]
        assert abs(got - fold_interval(x + k)) < 1e-7
    assert abs(dom.hess_bound - 2.0) < 1e-12


def test_make_domain_registry():
    assert G.make_domain("interval").dim == 1
    assert G.make_domain("ball", radius=2.0, dim=3).dim == 3
    with pytest.raises(KeyError):
        G.make_domain("moebius")
