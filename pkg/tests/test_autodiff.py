import zlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

import uavbls.agent  # noqa: F401  registers the pfam composite
from uavbls import autodiff as ad
from uavbls import checkpoint as ck
from uavbls.autodiff import ParamStore, Tensor


def leaf(x, name=None):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=True, name=name)


# ---- forward semantics ------------------------------------------------------------

def test_affine_examples():
    x = np.random.default_rng(0).normal(size=(4, 3))
    assert np.array_equal(ad.affine(x, np.eye(3), np.zeros(3)).data, x)
    out = ad.affine(np.zeros((2, 3)), np.ones((3, 2)), np.array([1.0, -2.0])).data
    assert np.array_equal(out, [[1.0, -2.0], [1.0, -2.0]])
    assert ad.affine([[2.0]], [[3.0]], [1.0]).data.tolist() == [[7.0]]


def test_affine_shape_mismatch():
    with pytest.raises(ValueError):
        ad.affine(np.zeros((2, 3)), np.zeros((4, 2)), np.zeros(2))


def test_activation_examples():
    assert ad.sigmoid(Tensor(0.0)).item() == 0.5
    assert ad.tanh(Tensor(0.0)).item() == 0.0
    assert ad.var(Tensor(np.full(7, 3.25))).item() == 0.0
    assert ad.relu(Tensor([-1.0, 2.0])).data.tolist() == [0.0, 2.0]


def test_log_domain():
    with pytest.raises((ad.NonFiniteError, ValueError)):
        ad.log(Tensor([0.0, -1.0]))


def test_nonfinite_names_op():
    with pytest.raises(ad.NonFiniteError, match="exp"):
        ad.exp(Tensor([1000.0]))


# ---- backward -------------------------------------------------------------------

def test_backward_sum_is_ones():
    w = leaf(np.arange(6.0).reshape(2, 3))
    ad.backward(ad.sum(w))
    assert np.array_equal(w.grad, np.ones((2, 3)))


def test_backward_stationary_point():
    c = np.array([1.0, -2.0, 0.5])
    x = leaf(c.copy())
    ad.backward(ad.mean(ad.square(x - c)))
    assert np.array_equal(x.grad, np.zeros(3))


def test_backward_clears_tape():
    x = leaf([1.0, 2.0])
    ad.backward(ad.sum(ad.square(x)))
    assert len(ad.get_tape().nodes) == 0


def test_backward_accumulates_shared_inputs():
    x = leaf([3.0])
    ad.backward(ad.sum(x * x + x))
    assert x.grad.tolist() == [7.0]


def test_no_grad_records_nothing():
    x = leaf([1.0])
    with ad.no_grad():
        y = ad.exp(x)
    assert y._node is None and len(ad.get_tape().nodes) == 0


def test_backward_requires_scalar():
    with pytest.raises(ValueError):
        ad.backward(leaf([1.0, 2.0]) * 2.0)
    ad.get_tape().clear()


def test_forward_backward_deterministic():
    def run():
        rng = np.random.default_rng(5)
        w = leaf(rng.normal(size=(4, 3)))
        x = rng.normal(size=(6, 4))
        loss = ad.mean(ad.tanh(ad.affine(x, w, np.zeros(3))))
        ad.backward(loss)
        return loss.item(), w.grad.copy()

    a, b = run(), run()
    assert a[0] == b[0] and np.array_equal(a[1], b[1])


# ---- gradcheck --------------------------------------------------------------------

@pytest.mark.parametrize("kind", sorted(ad.CHECK_CASES))
def test_gradcheck_every_op(kind):
    fn, leaves = ad.CHECK_CASES[kind](np.random.default_rng(zlib.crc32(kind.encode())))
    rep = ad.gradcheck(fn, leaves, tol=1e-6)
    assert rep.ok, (kind, rep.max_rel_error, rep.worst)


def test_gradcheck_linear_layer_tight():
    rng = np.random.default_rng(1)
    x, w, b = rng.normal(size=(5, 4)), leaf(rng.normal(size=(4, 3)), "w"), leaf(rng.normal(size=3), "b")
    rep = ad.gradcheck(lambda: ad.sum(ad.affine(x, w, b)), [w, b], tol=1e-6)
    assert rep.ok


def test_gradcheck_tanh_chain():
    rng = np.random.default_rng(2)
    ws = [leaf(rng.normal(size=(3, 3)) * 0.7, f"w{i}") for i in range(4)]
    x = rng.normal(size=(2, 3))

    def fn():
        h = Tensor(x)
        for w in ws:
            h = ad.tanh(ad.matmul(h, w))
        return ad.sum(h)

    assert ad.gradcheck(fn, ws, tol=1e-4).ok


def test_gradcheck_two_layer_net_any_parameter():
    rng = np.random.default_rng(3)
    store = ParamStore()
    w1, b1 = store.add("w1", rng.normal(size=(4, 6))), store.add("b1", rng.normal(size=6))
    w2, b2 = store.add("w2", rng.normal(size=(6, 1))), store.add("b2", rng.normal(size=1))
    x, y = rng.normal(size=(8, 4)), rng.normal(size=(8, 1))
    fn = lambda: ad.mean(ad.square(ad.affine(ad.tanh(ad.affine(x, w1, b1)), w2, b2) - y))
    assert ad.gradcheck(fn, [t for _, t in store], tol=1e-4).ok


def test_gradcheck_detects_corrupted_rule(monkeypatch):
    good = ad.RULES["tanh"]

    def broken(g, node):
        return [gi * 1.1 for gi in good(g, node)]

    monkeypatch.setitem(ad.RULES, "tanh", broken)
    fn, leaves = ad.CHECK_CASES["tanh"](np.random.default_rng(0))
    rep = ad.gradcheck(fn, leaves, tol=1e-4)
    assert not rep.ok and rep.max_rel_error > 1e-2
    with pytest.raises(ad.GradcheckError):
        ad.gradcheck(fn, leaves, tol=1e-4, raise_on_fail=True)


def test_gradcheck_all_includes_pfam():
    reports = ad.gradcheck_all(seed=7)
    assert "pfam" in reports
    bad = {k: r.max_rel_error for k, r in reports.items() if not r.ok}
    assert not bad


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from(sorted(ad.CHECK_CASES)))
def test_gradcheck_randomized(seed, kind):
    fn, leaves = ad.CHECK_CASES[kind](np.random.default_rng(seed))
    assert ad.gradcheck(fn, leaves, tol=1e-4).ok


# ---- ParamStore and Adam -------------------------------------------------------

def _store(seed=0):
    rng = np.random.default_rng(seed)
    s = ParamStore()
    s.add("a", rng.normal(size=(2, 3)))
    s.add("b", rng.normal(size=3))
    return s


def test_paramstore_order_and_shapes():
    s = _store()
    assert [name for name, _ in s] == ["a", "b"]
    for _, t in s:
        assert t.grad.shape == t.data.shape


def test_adam_zero_grad_unchanged():
    s = _store()
    before = [t.data.copy() for _, t in s]
    ad.adam_step(s, 1e-3)
    for (_, t), b in zip(s, before):
        assert np.array_equal(t.data, b)


def test_adam_first_step_is_lr_sign():
    s = _store()
    before = [t.data.copy() for _, t in s]
    g = [np.full(t.shape, -2.5) for _, t in s]
    for (_, t), gi in zip(s, g):
        t.grad[...] = gi
    ad.adam_step(s, 1e-3)
    for (_, t), b in zip(s, before):
        assert np.allclose(t.data - b, 1e-3, rtol=1e-7)


def test_adam_deterministic():
    a, b = _store(), _store()
    for s in (a, b):
        for _, t in s:
            t.grad[...] = 0.3
        ad.adam_step(s, 1e-2)
        ad.adam_step(s, 1e-2)
    for (_, x), (_, y) in zip(a, b):
        assert np.array_equal(x.data, y.data)


def test_adam_matches_reference_loop():
    # plain-numpy reference of the bias-corrected moment update
    s = _store(4)
    p = s["a"].data.copy()
    m = v = np.zeros_like(p)
    rng = np.random.default_rng(9)
    for k in range(1, 6):
        g = rng.normal(size=p.shape)
        s.zero_grad()
        s["a"].grad[...] = g
        ad.adam_step(s, 0.01)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        p = p - 0.01 * (m / (1 - 0.9 ** k)) / (np.sqrt(v / (1 - 0.999 ** k)) + 1e-8)
    assert np.allclose(s["a"].data, p, rtol=1e-12, atol=1e-14)


def test_load_arrays_errors():
    s = _store()
    with pytest.raises(ValueError, match="'a'"):
        s.load_arrays({"a": np.zeros((3, 2)), "b": np.zeros(3)})
    with pytest.raises(KeyError, match="missing"):
        s.load_arrays({"a": np.zeros((2, 3))})


# ---- checkpoint -------------------------------------------------------------------

def test_checkpoint_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {"actor/h0.w": rng.normal(size=(4, 5)), "x": np.array(3.5), "ünï": rng.normal(size=(2, 1, 3)),
               "edge": np.array([np.nextafter(0, 1), -0.0, 1e308])}
    ck.save(tmp_path / "m.lwpt", tensors)
    back = ck.load(tmp_path / "m.lwpt")
    assert list(back) == list(tensors)
    for k in tensors:
        assert back[k].shape == np.shape(tensors[k])
        assert back[k].tobytes() == np.asarray(tensors[k], dtype="<f8").tobytes()


def test_checkpoint_layout():
    blob = ck.dumps({"ab": np.array([[1.0, 2.0]])})
    assert blob[:4] == b"LWPT"
    assert blob[4:6] == (1).to_bytes(2, "little")
    assert blob[6:10] == (1).to_bytes(4, "little")
    assert blob[10:12] == (2).to_bytes(2, "little") and blob[12:14] == b"ab"
    assert blob[14] == 2
    assert blob[15:23] == (1).to_bytes(4, "little") + (2).to_bytes(4, "little")
    assert np.frombuffer(blob[23:], "<f8").tolist() == [1.0, 2.0]


def test_checkpoint_rejects_garbage():
    with pytest.raises(ck.CheckpointError):
        ck.loads(b"NOPE" + b"\0" * 10)
    blob = ck.dumps({"a": np.zeros(4)})
    with pytest.raises(ck.CheckpointError):
        ck.loads(blob[:-3])


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(0, 4), st.integers(1, 3)), elements=st.floats(allow_nan=False)))
def test_checkpoint_roundtrip_property(a):
    back = ck.loads(ck.dumps({"t": a}))["t"]
    assert back.tobytes() == a.astype("<f8").tobytes() and back.shape == a.shape
