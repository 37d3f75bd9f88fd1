import math

import numpy as np
import pytest

from routefield.network import (
    CongestionDomainError,
    affine,
    augment_od,
    bpr,
    build_network,
    congestion_times,
    constant,
    evaluate_congestion,
    scale_capacity,
    step,
)


def test_bpr_direct_substitution():
    fn = bpr(t0=1.0, alpha=0.15, beta=4.0, rel_capacity=0.5)
    assert evaluate_congestion(fn, 0.5) == pytest.approx(1.15)


def test_constant_ignores_load():
    fn = constant(2.0)
    assert evaluate_congestion(fn, 0.9) == 2.0
    assert evaluate_congestion(fn, 0.0) == 2.0


def test_affine_pigou_equilibrium_point():
    fn = affine(1.0, 2.0)
    assert evaluate_congestion(fn, 0.5) == pytest.approx(2.0)


def test_domain_errors_beyond_slack():
    fn = affine(1.0, 2.0)
    with pytest.raises(CongestionDomainError):
        evaluate_congestion(fn, -1e-6)
    with pytest.raises(CongestionDomainError):
        evaluate_congestion(fn, 1.0 + 1e-6)
    # roundoff-sized excursions clamp
    assert evaluate_congestion(fn, 1.0 + 1e-10) == pytest.approx(3.0)
    assert evaluate_congestion(fn, -1e-10) == pytest.approx(1.0)


@pytest.mark.parametrize("fn", [
    constant(2.0),
    affine(1.0, 2.0),
    affine(0.0, 2.0),
    bpr(1.0, 0.15, 4.0, 0.5),
    bpr(10.0, 0.15, 4.0, 0.344),
])
def test_outputs_finite_and_nonnegative_on_domain(fn):
    mus = np.linspace(0.0, 1.0, 101)
    times = congestion_times(fn, mus)
    assert np.all(np.isfinite(times))
    assert np.all(times >= 0.0)
    for mu in (0.0, 0.25, 1.0):
        assert evaluate_congestion(fn, mu) == pytest.approx(
            float(congestion_times(fn, np.array([mu]))[0]))


def test_scale_capacity_identity_and_relation():
    fn = bpr(1.0, 1.0, 1.0, 0.5)
    assert scale_capacity(fn, 100, 100) == fn
    scaled = scale_capacity(fn, 200, 100)
    assert scaled.rel_capacity == pytest.approx(0.25)
    # f'(n / 200) == f(n / 100)
    assert evaluate_congestion(scaled, 50 / 200) == pytest.approx(
        evaluate_congestion(fn, 50 / 100))
    assert evaluate_congestion(fn, 0.5) == pytest.approx(2.0)


def test_scale_capacity_constant_output_unchanged():
    fn = constant(2.0)
    scaled = scale_capacity(fn, 977, 13)
    for mu in (0.0, 0.3, 1.0):
        assert evaluate_congestion(scaled, mu) == 2.0


def test_scale_capacity_round_trip():
    fn = bpr(3.0, 0.15, 4.0, 0.37)
    back = scale_capacity(scale_capacity(fn, 14000, 100), 100, 14000)
    assert back.rel_capacity == pytest.approx(fn.rel_capacity, rel=1e-12)


def test_scale_capacity_rejects_nonpositive_counts():
    with pytest.raises(ValueError):
        scale_capacity(constant(1.0), 0, 10)
    with pytest.raises(ValueError):
        scale_capacity(constant(1.0), 10, -1)


def test_step_threshold_sides():
    lt = step(1.0, 2.0, 0.5, inclusive=False)
    le = step(1.0, 2.0, 0.5, inclusive=True)
    assert evaluate_congestion(lt, 0.5) == 2.0
    assert evaluate_congestion(le, 0.5) == 1.0
    assert evaluate_congestion(lt, 0.49) == 1.0
    assert evaluate_congestion(le, 0.51) == 2.0


def test_augment_od_pigou_link_count():
    net = build_network([(1, 2, constant(2.0)), (1, 2, affine(1.0, 2.0))])
    full = augment_od(net, [1], [2])
    assert full.n_links == 4
    origin = full.origin_link(1)
    assert full.successors(origin) == (0, 1)
    dest = full.destination_link(2)
    assert full.successors(dest) == ()
    assert full.successors(0) == (dest,)


def test_augment_od_braess_link_count():
    net = build_network([
        (1, 2, affine(1.0, 1.0)), (1, 3, constant(2.0)), (2, 3, constant(0.25)),
        (2, 4, constant(2.0)), (3, 4, affine(1.0, 1.0)),
    ])
    assert augment_od(net, [1], [4]).n_links == 7


def test_augment_od_empty_is_noop():
    net = build_network([(1, 2, constant(1.0))])
    assert augment_od(net, [], []).n_links == net.n_links


def test_augment_od_unknown_node():
    net = build_network([(1, 2, constant(1.0))])
    with pytest.raises(KeyError):
        augment_od(net, [99], [2])


def test_successor_consistency():
    net = build_network([
        (1, 2, constant(1.0)), (2, 3, constant(1.0)), (1, 3, constant(1.0)),
        (3, 1, constant(1.0)),
    ])
    for link in net.links:
        for succ in net.successors(link.id):
            assert net.links[succ].tail == link.head


def test_degenerate_affine_rejected():
    with pytest.raises(ValueError):
        affine(0.0, 0.0)
    with pytest.raises(ValueError):
        bpr(0.0, 1.0, 4.0, 0.5)
    with pytest.raises(ValueError):
        bpr(1.0, 1.0, 4.0, 0.0)
