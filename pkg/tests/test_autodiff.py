import math
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from specgeo import autodiff as ad
from specgeo import checkpoint
from specgeo.autodiff import DimensionError, Tensor
from specgeo.nn import MLP, Attention, multi_head_attention


def naive_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


class TestLinear:
    def test_identity(self):
        x = np.array([[1.5, -2.0, 3.0]])
        out = ad.linear(Tensor(x), Tensor(np.eye(3)), Tensor(np.zeros(3)))
        np.testing.assert_array_equal(out.data, x)

    def test_hand_sum(self):
        out = ad.linear(Tensor([[1.0, 2.0]]), Tensor([[1.0], [1.0]]), Tensor([0.0]))
        assert out.data.tolist() == [[3.0]]

    def test_matches_triple_loop(self):
        rng = np.random.default_rng(1)
        x, w, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2)), rng.normal(size=2)
        out = ad.linear(Tensor(x), Tensor(w), Tensor(b))
        np.testing.assert_allclose(out.data, naive_matmul(x, w) + b, rtol=1e-14)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            ad.linear(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))), Tensor(np.zeros(2)))


class TestSilu:
    def test_zero(self):
        assert ad.silu(Tensor([0.0])).data[0] == 0.0

    def test_large(self):
        assert ad.silu(Tensor([40.0])).data[0] == pytest.approx(40.0, rel=1e-15)

    def test_one(self):
        assert ad.silu(Tensor([1.0])).data[0] == pytest.approx(1.0 / (1.0 + math.exp(-1.0)), abs=1e-15)
        assert ad.silu(Tensor([1.0])).data[0] == pytest.approx(0.731058, abs=1e-6)


class TestSoftmax:
    def test_constant_row(self):
        out = ad.softmax(Tensor(np.full((1, 5), 3.3)))
        np.testing.assert_allclose(out.data, 0.2)

    def test_ln3(self):
        out = ad.softmax(Tensor([[0.0, math.log(3.0)]]))
        np.testing.assert_allclose(out.data, [[0.25, 0.75]], atol=1e-15)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (3, 7), elements=st.floats(-50, 50)), st.floats(-100, 100))
    def test_rows_sum_to_one_and_shift_invariant(self, x, c):
        a = ad.softmax(Tensor(x)).data
        b = ad.softmax(Tensor(x + c)).data
        np.testing.assert_allclose(a.sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(a, b, atol=1e-12)
        assert (a >= 0).all()


class TestAttention:
    def setup_method(self):
        self.rng = np.random.default_rng(7)
        self.att = Attention(8, 5, 2, self.rng)

    def test_equal_keys_average_values(self):
        q = Tensor(self.rng.normal(size=(3, 8)))
        ctx = np.tile(self.rng.normal(size=(1, 5)), (4, 1))
        ctx[:, :] = ctx[0]
        # identical keys -> uniform weights -> output is projected mean value
        ctx_vals = ctx.copy()
        out, attn = self.att(q, Tensor(ctx_vals))
        np.testing.assert_allclose(attn, 0.25, atol=1e-14)
        expected = (ctx_vals.mean(0, keepdims=True) @ self.att.w_v.data) @ self.att.w_o.data + self.att.b_o.data
        np.testing.assert_allclose(out.data, np.repeat(expected, 3, 0), atol=1e-12)

    def test_single_context_row(self):
        q = Tensor(self.rng.normal(size=(4, 8)))
        ctx = self.rng.normal(size=(1, 5))
        out, _ = self.att(q, Tensor(ctx))
        expected = (ctx @ self.att.w_v.data) @ self.att.w_o.data + self.att.b_o.data
        np.testing.assert_allclose(out.data, np.repeat(expected, 4, 0), atol=1e-12)

    def test_two_heads_match_loop_oracle(self):
        q = self.rng.normal(size=(3, 8))
        ctx = self.rng.normal(size=(6, 5))
        out, attn = self.att(Tensor(q), Tensor(ctx))
        w = self.att
        heads = []
        for i in range(2):
            cols = slice(4 * i, 4 * i + 4)
            Q = q @ w.w_q.data[:, cols]
            K = ctx @ w.w_k.data[:, cols]
            V = ctx @ w.w_v.data[:, cols]
            rows = []
            for r in range(3):
                s = np.array([Q[r] @ K[c] / 2.0 for c in range(6)])
                p = np.exp(s - s.max())
                p /= p.sum()
                np.testing.assert_allclose(attn[i, r], p, atol=1e-13)
                rows.append(sum(p[c] * V[c] for c in range(6)))
            heads.append(np.array(rows))
        expected = np.concatenate(heads, axis=1) @ w.w_o.data + w.b_o.data
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    def test_identical_queries_identical_rows(self):
        q = np.tile(self.rng.normal(size=(1, 8)), (5, 1))
        out, _ = self.att(Tensor(q), Tensor(self.rng.normal(size=(6, 5))))
        np.testing.assert_allclose(out.data, np.repeat(out.data[:1], 5, 0), atol=1e-14)

    def test_indivisible_heads(self):
        with pytest.raises(DimensionError):
            Attention(7, 5, 2, self.rng)
        with pytest.raises(DimensionError):
            multi_head_attention(Tensor(np.ones((2, 8))), Tensor(np.ones((3, 4))), self.att.projections, 2)


class TestBackward:
    def test_quadratic(self):
        x = Tensor([1.0, -2.0, 3.5], requires_grad=True)
        ad.backward((x * x).sum())
        np.testing.assert_allclose(x.grad, 2 * x.data)

    def test_off_path_parameter_is_zero(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        p = Tensor([5.0], requires_grad=True)
        gx, gp = ad.gradients((x * x).sum(), [x, p])
        np.testing.assert_array_equal(gp, [0.0])

    def test_non_scalar_rejected(self):
        with pytest.raises(ValueError):
            ad.backward(Tensor([1.0, 2.0], requires_grad=True) * 2.0)

    def test_shared_node_visited_once(self):
        x = Tensor([3.0], requires_grad=True)
        y = x * x
        loss = (y + y + y).sum()
        ad.backward(loss)
        np.testing.assert_allclose(x.grad, [18.0])

    def test_mlp_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        mlp = MLP(4, 6, 2, rng)
        x = Tensor(rng.uniform(-2, 2, (5, 4)))
        err = ad.check_param_gradients(lambda: (mlp(x) ** 2).sum(), mlp.parameters())
        assert err < 1e-4


def _ops():
    rng = np.random.default_rng(11)
    c34 = rng.normal(size=(3, 4))
    w = rng.normal(size=(4, 2))
    gam, bet = rng.normal(size=4), rng.normal(size=4)
    idx = np.array([2, 0, 0, 1])
    ctx = rng.normal(size=(5, 3))
    att = Attention(4, 3, 2, rng)
    return {
        "add": lambda x: (x + Tensor(c34)).sum() * 1.0 + (x * x).sum(),
        "sub": lambda x: ((Tensor(c34) - x) ** 2).sum(),
        "mul": lambda x: (x * Tensor(c34) * x).sum(),
        "div": lambda x: (Tensor(c34) / (x * x + 1.0)).sum(),
        "matmul": lambda x: ((x @ Tensor(w)) ** 2).sum(),
        "linear": lambda x: (ad.linear(x, Tensor(w), Tensor(np.ones(2))) ** 2).sum(),
        "exp": lambda x: ad.exp(x).sum(),
        "log": lambda x: ad.log(x * x + 0.5).sum(),
        "sqrt": lambda x: ad.sqrt(x * x + 0.3).sum(),
        "sigmoid": lambda x: (ad.sigmoid(x) * Tensor(c34)).sum(),
        "silu": lambda x: (ad.silu(x) * Tensor(c34)).sum(),
        "softplus": lambda x: (ad.softplus(x) * Tensor(c34)).sum(),
        "tanh": lambda x: (ad.tanh(x) * Tensor(c34)).sum(),
        "softmax": lambda x: (ad.softmax(x, axis=1) * Tensor(c34)).sum(),
        "sum_axis": lambda x: (x.sum(axis=0) ** 2).sum(),
        "mean": lambda x: (x.mean(axis=1, keepdims=True) * x).sum(),
        "reshape_transpose": lambda x: ((x.reshape(4, 3).T @ Tensor(c34.T)) ** 2).sum(),
        "getitem": lambda x: (x[1:, ::2] ** 2).sum(),
        "take": lambda x: (ad.take(x, idx) * ad.take(x, idx[::-1])).sum(),
        "segment_sum": lambda x: (ad.segment_sum(x, np.array([0, 1, 0]), 2) ** 2).sum(),
        "concat": lambda x: (ad.concat([x, x * x], axis=1) ** 2).sum(),
        "layer_norm": lambda x: (ad.layer_norm(x, Tensor(gam), Tensor(bet)) * Tensor(c34)).sum(),
        "attention": lambda x: (att(x, Tensor(ctx))[0] * Tensor(c34)).sum(),
    }


@pytest.mark.parametrize("name", sorted(_ops()))
def test_op_gradients_match_central_differences(name):
    f = _ops()[name]
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    for _ in range(3):
        point = rng.uniform(-2, 2, (3, 4))
        report = ad.grad_check(f, point, tol=1e-4)
        assert report.passed, report.max_rel_error


def test_grad_check_linear_function_exact():
    report = ad.grad_check(lambda x: (x * 3.0).sum(), np.ones((2, 2)))
    assert report.max_rel_error < 1e-9


def test_grad_check_silu():
    rng = np.random.default_rng(0)
    report = ad.grad_check(lambda x: ad.silu(x).sum(), rng.uniform(-2, 2, 10))
    assert report.max_rel_error < 1e-4


def test_grad_check_reports_nonfinite():
    with pytest.raises(ad.GradCheckError):
        ad.grad_check(lambda x: ad.log(x).sum(), np.array([-1.0]))


def test_checkpoint_roundtrip(tmp_path):
    tensors = {"a.weight": np.arange(6.0).reshape(2, 3), "b": np.array([1.5]), "scalar": np.array(2.0)}
    digest = checkpoint.save(tmp_path / "p.s2g", tensors, {"stage": "x"})
    blob = (tmp_path / "p.s2g").read_bytes()
    assert blob[:4] == b"S2G1"
    loaded, meta = checkpoint.load(tmp_path / "p.s2g")
    assert meta == {"stage": "x"}
    for k, v in tensors.items():
        np.testing.assert_array_equal(loaded[k], v)
    assert digest == checkpoint.file_hash(tmp_path / "p.s2g")


def test_checkpoint_bad_magic():
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.loads(b"XXXX" + b"\0" * 8)
