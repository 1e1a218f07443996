import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dolphinfit import autodiff as ad
from dolphinfit.optim import AdamState, adam_step


def grad_of(fn, *values):
    with ad.Tape() as tape:
        leaves = [tape.leaf(v) for v in values]
        out = fn(*leaves)
    g = ad.backward(tape, out)
    return [g[x] for x in leaves]


def test_square_gradient():
    (g,) = grad_of(lambda x: x * x, 3.0)
    assert g == 6.0


def test_product_plus_sine_gradient():
    gx, gy = grad_of(lambda x, y: x * y + ad.sin(x), 2.0, 5.0)
    assert gx == pytest.approx(5.0 + np.cos(2.0), abs=1e-15)
    assert gy == pytest.approx(2.0, abs=1e-15)


def test_unreachable_leaf_gets_zero():
    gx, gy = grad_of(lambda x, y: x * 2.0, 1.0, np.ones(3))
    assert gx == 2.0
    np.testing.assert_array_equal(gy, np.zeros(3))


def test_backward_rejects_nonscalar():
    with ad.Tape() as tape:
        x = tape.leaf(np.ones(3))
        y = x * 2.0
    with pytest.raises(ValueError, match="scalar"):
        ad.backward(tape, y)


def test_finite_diff_quadratic_is_exact():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(4, 4))
    A = A @ A.T
    err = ad.finite_diff_check(lambda p: ad.vsum(p["x"] * (A @ p["x"])), {"x": rng.normal(size=(4, 1))})
    assert err < 1e-9


def test_finite_diff_degenerate_step():
    with pytest.raises(ValueError, match="degenerate step"):
        ad.finite_diff_check(lambda p: ad.vsum(p["x"]), {"x": np.ones(2)}, eps=0.0)


def _random_graph(p, coef):
    x, y = p["x"], p["y"]
    f = ad.vsum(ad.sin(x) * y) + ad.vsum(ad.exp(x * 0.3) / (1.0 + y * y))
    g = ad.vsum(ad.sqrt(1.0 + x * x) * ad.cos(y)) + ad.vsum(ad.reshape(x, (1, -1)) @ ad.reshape(y, (-1, 1)))
    return f * coef[0] + g * coef[1], f, g


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_backward_is_linear(seed, a, b):
    rng = np.random.default_rng(seed)
    vals = {"x": rng.normal(size=5), "y": rng.normal(size=5)}

    def grads(which):
        with ad.Tape() as tape:
            p = {k: tape.leaf(v) for k, v in vals.items()}
            out = _random_graph(p, (a, b))[which]
        g = ad.backward(tape, out)
        return {k: g[p[k]] for k in p}

    combo, f, g = grads(0), grads(1), grads(2)
    for k in vals:
        np.testing.assert_allclose(combo[k], a * f[k] + b * g[k], rtol=0, atol=1e-12)


@pytest.mark.parametrize("name", ["matmul", "take", "stack", "where", "clip", "norm", "cross", "segment_sum"])
def test_primitive_gradients(name):
    rng = np.random.default_rng(1)
    idx = np.array([0, 2, 2, 1])
    mats = rng.normal(size=(3, 3))
    fns = {
        "matmul": lambda p: ad.vsum(ad.sin(mats @ p["x"] @ mats.T)),
        "take": lambda p: ad.vsum(ad.take(p["x"], idx) ** 2),
        "stack": lambda p: ad.vsum(ad.stack([p["x"][0], p["x"][1] * 2.0]) ** 2),
        "where": lambda p: ad.vsum(ad.where(np.eye(3) > 0, p["x"] ** 2, ad.exp(p["x"]))),
        "clip": lambda p: ad.vsum(ad.clip(p["x"], -0.5, 0.5) * p["x"]),
        "norm": lambda p: ad.vsum(ad.norm(p["x"], axis=1)),
        "cross": lambda p: ad.vsum(ad.cross(p["x"], p["x"][::-1]) ** 2),
        "segment_sum": lambda p: ad.vsum(ad.segment_sum(p["x"], np.array([1, 0, 1]), 2) ** 2),
    }
    x = rng.normal(size=(3, 3))
    x[np.abs(np.abs(x) - 0.5) < 1e-2] += 0.05
    assert ad.finite_diff_check(fns[name], {"x": x}) < 1e-6


def test_soft_union_gradient_and_value():
    rng = np.random.default_rng(2)
    a = rng.uniform(0.05, 3.0, 12)
    seg = np.array([0, 0, 0, 1, 1, 2, 2, 2, 2, 3, 3, 3])
    out = ad.soft_union(ad.const(a), seg, 5).value
    oracle = [1 - np.prod(1 - np.exp(-a[seg == s])) if (seg == s).any() else 0.0 for s in range(5)]
    np.testing.assert_allclose(out, oracle, rtol=1e-13, atol=1e-15)
    w = rng.normal(size=5)
    assert ad.finite_diff_check(lambda p: ad.vsum(ad.soft_union(p["a"], seg, 5) * w), {"a": a}) < 1e-6


def test_soft_union_full_coverage_gradient():
    # an exact zero exponent makes the bucket 1; only that entry carries gradient
    a = np.array([0.0, 0.7, 1.2])
    seg = np.zeros(3, dtype=int)
    (g,) = grad_of(lambda x: ad.vsum(ad.soft_union(x, seg, 1)), a)
    assert g[0] == pytest.approx(-(1 - np.exp(-0.7)) * (1 - np.exp(-1.2)))
    np.testing.assert_array_equal(g[1:], 0.0)


def test_point_segment_distance():
    rng = np.random.default_rng(3)
    pts = rng.normal(size=(6, 2))
    i0 = np.array([0, 1, 2, 3, 4, 0])
    i1 = np.array([1, 2, 3, 4, 5, 5])
    p = rng.normal(size=(6, 2))
    d2 = ad.point_segment_dist2(ad.const(pts), i0, i1, p).value
    for k in range(6):
        a, b = pts[i0[k]], pts[i1[k]]
        ts = np.linspace(0, 1, 200001)
        brute = np.min(np.sum((a + ts[:, None] * (b - a) - p[k]) ** 2, axis=1))
        assert d2[k] == pytest.approx(brute, rel=1e-8, abs=1e-12)
    assert ad.finite_diff_check(lambda q: ad.vsum(ad.point_segment_dist2(q["x"], i0, i1, p)), {"x": pts}) < 1e-6


def test_bilinear_sample():
    rng = np.random.default_rng(4)
    tex = rng.uniform(size=(5, 7))
    u = rng.uniform(0.02, 0.98, 9)
    v = rng.uniform(0.02, 0.98, 9)
    out = ad.bilinear_sample(ad.const(tex), ad.const(u), ad.const(v)).value
    from scipy.interpolate import RegularGridInterpolator

    interp = RegularGridInterpolator((np.linspace(0, 1, 5), np.linspace(0, 1, 7)), tex)
    np.testing.assert_allclose(out, interp(np.stack([v, u], axis=1)), rtol=1e-12)
    loss = lambda p: ad.vsum(ad.bilinear_sample(p["t"], p["u"], p["v"]) ** 2)  # noqa: E731
    assert ad.finite_diff_check(loss, {"t": tex, "u": u, "v": v}) < 1e-6


def test_adam_first_step():
    state = AdamState(lr={"x": 0.01})
    out = adam_step({"x": np.array([2.0])}, {"x": np.array([1.0])}, state)
    assert out["x"][0] - 2.0 == pytest.approx(-0.01 / (1 + 1e-8), abs=1e-15)


def test_adam_zero_grad_keeps_params():
    state = AdamState(lr={"x": 0.01})
    out = adam_step({"x": np.array([2.0, -1.0])}, {"x": np.zeros(2)}, state)
    np.testing.assert_array_equal(out["x"], [2.0, -1.0])


def test_adam_constant_gradient_step_tends_to_lr():
    state = AdamState(lr={"x": 0.01})
    p = {"x": np.array([0.0])}
    for _ in range(2000):
        prev = p["x"][0]
        p = adam_step(p, {"x": np.array([-3.0])}, state)
    assert p["x"][0] - prev == pytest.approx(0.01, rel=1e-6)


def test_adam_shape_mismatch():
    with pytest.raises(ValueError, match="shape mismatch"):
        adam_step({"x": np.zeros(2)}, {"x": np.zeros(3)}, AdamState(lr={"x": 0.1}))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_adam_zero_lr_is_identity(seed):
    rng = np.random.default_rng(seed)
    p = {"a": rng.normal(size=(3, 2)), "b": rng.normal(size=4)}
    state = AdamState(lr={"a": 0.0, "b": 0.0})
    for _ in range(5):
        new = adam_step(p, {k: rng.normal(size=v.shape) for k, v in p.items()}, state)
        for k in p:
            np.testing.assert_array_equal(new[k], p[k])
        p = new


def test_adam_clamps_applied():
    state = AdamState(lr={"a": 1.0})
    out = adam_step({"a": np.array([0.5, 0.99])}, {"a": np.array([-1.0, -1.0])}, state,
                    {"a": lambda x: np.clip(x, 0.0, 1.0)})
    np.testing.assert_array_equal(out["a"], [1.0, 1.0])
