import numpy as np
import pytest
import scipy.sparse as sp
from scipy.optimize import linprog

from classavg.transport import (
    SizeCapError,
    TransportError,
    UnbalancedMassError,
    exact_w1_rotinv,
    exact_wp,
)


def lp_wp(i1, i2, p=1, pixel_size=1.0):
    """Independent dense-LP formulation of the same transportation problem."""
    a = np.asarray(i1, dtype=float)
    b = np.asarray(i2, dtype=float)
    a = a / a.sum()
    b = b / b.sum()
    n = a.shape[0]
    coords = np.stack(np.meshgrid(np.arange(n), np.arange(n), indexing="ij"), -1).reshape(-1, 2)
    ia = np.flatnonzero(a.ravel() > 0)
    ib = np.flatnonzero(b.ravel() > 0)
    ca, cb = coords[ia], coords[ib]
    cost = np.linalg.norm((ca[:, None, :] - cb[None, :, :]) * pixel_size, axis=2) ** p
    ns, nt = len(ia), len(ib)
    rows, cols, vals = [], [], []
    for i in range(ns):
        rows.extend([i] * nt)
        cols.extend(range(i * nt, (i + 1) * nt))
        vals.extend([1.0] * nt)
    for j in range(nt):
        rows.extend([ns + j] * ns)
        cols.extend(range(j, ns * nt, nt))
        vals.extend([1.0] * ns)
    A = sp.csr_matrix((vals, (rows, cols)), shape=(ns + nt, ns * nt))
    rhs = np.concatenate([a.ravel()[ia], b.ravel()[ib]])
    res = linprog(cost.ravel(), A_eq=A, b_eq=rhs, bounds=(0, None), method="highs")
    assert res.status == 0, res.message
    return res.fun


def delta_image(n, *spots):
    img = np.zeros((n, n))
    for (x, y, m) in spots:
        img[x, y] += m
    return img


def test_identical_images_zero_with_identity_plan():
    rng = np.random.default_rng(0)
    img = rng.random((8, 8))
    d, plan = exact_wp(img, img.copy(), p=1)
    assert d == 0.0
    assert np.array_equal(plan.src, plan.dst)
    assert np.allclose(plan.marginal((8, 8), "source"), img / img.sum(), atol=1e-12)


def test_single_path_transport():
    i1 = delta_image(8, (0, 0, 1.0))
    i2 = delta_image(8, (0, 3, 1.0))
    d, plan = exact_wp(i1, i2, p=1, pixel_size=1.0)
    assert abs(d - 3.0) < 1e-12
    assert plan.mass.sum() == pytest.approx(1.0)


def test_split_transport():
    i1 = delta_image(8, (0, 0, 1.0))
    i2 = delta_image(8, (0, 2, 0.5), (2, 0, 0.5))
    d, _ = exact_wp(i1, i2, p=1, pixel_size=1.0)
    assert abs(d - 2.0) < 1e-12


def test_p2_objective_is_unrooted():
    i1 = delta_image(8, (1, 1, 1.0))
    i2 = delta_image(8, (1, 5, 1.0))
    d, _ = exact_wp(i1, i2, p=2, pixel_size=1.0)
    assert abs(d - 16.0) < 1e-12


def test_sixteen_grid_deltas_in_ground_units():
    i1 = delta_image(16, (8, 8, 1.0))
    i2 = delta_image(16, (8, 12, 1.0))
    d, _ = exact_wp(i1, i2, p=1, pixel_size=2 / 16)
    assert abs(d - 0.5) < 1e-12


def test_plan_invariants_on_random_pairs():
    rng = np.random.default_rng(42)
    for _ in range(10):
        a = rng.random((8, 8))
        b = rng.random((8, 8))
        a, b = a / a.sum(), b / b.sum()
        d, plan = exact_wp(a, b, p=1)
        assert np.all(plan.mass >= 0)
        assert np.max(np.abs(plan.marginal((8, 8), "source") - a / a.sum())) < 1e-9
        assert np.max(np.abs(plan.marginal((8, 8), "target") - b / b.sum())) < 1e-9
        assert abs(plan.cost_from_pairs() - d) <= 1e-9 * max(d, 1.0)


@pytest.mark.parametrize("p", [1, 2])
def test_matches_independent_lp_oracle(p):
    rng = np.random.default_rng(7 + p)
    worst = 0.0
    for _ in range(100):
        # mix dense and sparse mass patterns
        a = rng.random((8, 8))
        b = rng.random((8, 8))
        if rng.random() < 0.3:
            a[a < 0.7] = 0.0
            b[b < 0.7] = 0.0
            if a.sum() == 0 or b.sum() == 0:
                continue
        a, b = a / a.sum(), b / b.sum()
        mine, _ = exact_wp(a, b, p=p, pixel_size=0.25)
        ref = lp_wp(a, b, p=p, pixel_size=0.25)
        worst = max(worst, abs(mine - ref) / max(ref, 1e-12))
    assert worst < 1e-6


def test_metric_axioms_p1():
    rng = np.random.default_rng(3)
    imgs = [rng.random((8, 8)) for _ in range(6)]
    imgs = [im / im.sum() for im in imgs]
    for i in range(3):
        a, b, c = imgs[2 * i % 6], imgs[(2 * i + 1) % 6], imgs[(2 * i + 2) % 6]
        dab, _ = exact_wp(a, b)
        dba, _ = exact_wp(b, a)
        dbc, _ = exact_wp(b, c)
        dac, _ = exact_wp(a, c)
        assert dab >= 0
        assert abs(dab - dba) < 1e-7
        assert dac <= dab + dbc + 1e-7


def test_input_contracts():
    with pytest.raises(UnbalancedMassError):
        exact_wp(np.ones((4, 4)), 2 * np.ones((4, 4)))
    neg = np.ones((4, 4))
    neg[0, 0] = -0.1
    with pytest.raises(TransportError):
        exact_wp(neg, np.ones((4, 4)) * neg.sum() / 16)
    with pytest.raises(SizeCapError):
        exact_wp(np.ones((33, 33)), np.ones((33, 33)))
    with pytest.raises(TransportError):
        exact_wp(np.ones((4, 4)), np.ones((4, 4)), p=3)


def test_rotinv_degenerate_single_rotation_equals_plain():
    rng = np.random.default_rng(5)
    a = rng.random((8, 8))
    b = rng.random((8, 8))
    a, b = a / a.sum(), b / b.sum()
    plain, _ = exact_wp(a, b, p=1, pixel_size=0.25)
    rot = exact_w1_rotinv(a, b, rotation_count=1, pixel_size=0.25)
    assert abs(plain - rot) < 1e-12


def test_rotinv_recovers_rotated_copy():
    from classavg.metrics import rotate_image

    rng = np.random.default_rng(6)
    base = np.zeros((16, 16))
    base[4:9, 6:11] = rng.random((5, 5)) + 0.5
    theta = 2 * np.pi * 3 / 8
    rotated = np.clip(rotate_image(base, theta), 0, None)
    base, rotated = base / base.sum(), rotated / rotated.sum()
    d_plain, _ = exact_wp(base, rotated, p=1, pixel_size=2 / 16)
    d_rot = exact_w1_rotinv(base, rotated, rotation_count=8, pixel_size=2 / 16)
    assert d_rot <= d_plain + 1e-12
    # aligned residual should be on the order of interpolation leakage
    assert d_rot <= 2 * (2 / 16)


def test_rotinv_pruning_matches_bruteforce_min():
    from classavg.metrics import RotationGrid, rotate_image

    rng = np.random.default_rng(8)
    a = rng.random((12, 12))
    b = rng.random((12, 12))
    a, b = a / a.sum(), b / b.sum()
    m = 8
    px = 2 / 12
    a_n = a / a.sum()
    best = np.inf
    for angle in RotationGrid(m).angles:
        rot = np.clip(rotate_image(b / b.sum(), angle), 0, None) if angle else b / b.sum()
        rot = rot / rot.sum()
        d, _ = exact_wp(a_n, rot, p=1, pixel_size=px)
        best = min(best, d)
    assert abs(exact_w1_rotinv(a, b, rotation_count=m, pixel_size=px) - best) < 1e-12
