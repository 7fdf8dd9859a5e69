import numpy as np
import pytest

import oracle
from coattendwg import tensor as T
from coattendwg.gradcheck import gradcheck
from coattendwg.layers import (
    DropoutConfig,
    LinearParams,
    MambaFormerLayerParams,
    MHAParams,
    dropout,
    linear,
    mambaformer_encode,
    mha,
)
from coattendwg.model import named_parameters
from coattendwg.tensor import ShapeError, Tensor


def test_linear_identity(rng):
    x = rng.standard_normal((3, 4))
    p = LinearParams(Tensor(np.eye(4)), Tensor(np.zeros(4)))
    np.testing.assert_array_equal(linear(p, Tensor(x)).data, x)


def test_linear_dot_plus_bias():
    p = LinearParams(Tensor([[1.0, 1.0]]), Tensor([0.5]))
    assert linear(p, Tensor([2.0, 3.0])).data.tolist() == [5.5]


def test_linear_dim_mismatch():
    p = LinearParams(Tensor(np.zeros((2, 3))), Tensor(np.zeros(2)))
    with pytest.raises(ShapeError):
        linear(p, Tensor(np.zeros((1, 4))))


def test_linear_init_range(rng):
    p = LinearParams.init(rng, 16, 5)
    assert p.W.shape == (5, 16) and p.b.shape == (5,)
    assert np.abs(p.W.data).max() <= 0.25


def _named(prefix, params):
    return {f"{prefix}.{n}": t.data for n, t in named_parameters(params)}


def test_mha_single_key(rng):
    p = MHAParams.init(rng, 4, 2)
    q, kv = rng.standard_normal((2, 3, 4)), rng.standard_normal((2, 1, 4))
    out, attn = mha(p, Tensor(q), Tensor(kv), Tensor(kv))
    assert np.all(attn.data == 1.0)
    expected = kv @ p.W_V.data.T @ p.W_O.data.T
    np.testing.assert_allclose(out.data, np.repeat(expected, 3, axis=1), atol=1e-14)


def test_mha_identity_projections(rng):
    eye = lambda: Tensor(np.eye(4))
    p = MHAParams(1, eye(), eye(), eye(), eye())
    v = rng.standard_normal((2, 1, 4))
    out, _ = mha(p, Tensor(v), Tensor(v), Tensor(v))
    np.testing.assert_array_equal(out.data, v)


@pytest.mark.parametrize("D,h,Lq,Lk", [(4, 2, 3, 3), (8, 4, 2, 4), (6, 3, 4, 1), (8, 1, 1, 2)])
def test_mha_matches_loop_reference(rng, D, h, Lq, Lk):
    p = MHAParams.init(rng, D, h)
    q, k, v = rng.standard_normal((2, Lq, D)), rng.standard_normal((2, Lk, D)), rng.standard_normal((2, Lk, D))
    out, attn = mha(p, Tensor(q), Tensor(k), Tensor(v))
    ref_out, ref_attn = oracle.attention(_named("m", p), "m", h, q, k, v)
    np.testing.assert_allclose(out.data, ref_out, atol=1e-10)
    np.testing.assert_allclose(attn.data, ref_attn, atol=1e-10)
    np.testing.assert_allclose(attn.data.sum(-1), 1.0, atol=1e-6)


def test_mha_errors(rng):
    with pytest.raises(ValueError):
        MHAParams.init(rng, 6, 4)
    p = MHAParams.init(rng, 4, 2)
    with pytest.raises(ShapeError):
        mha(p, Tensor(np.zeros((1, 1, 4))), Tensor(np.zeros((1, 0, 4))), Tensor(np.zeros((1, 0, 4))))
    p.heads = 3
    with pytest.raises(ShapeError):
        mha(p, *(Tensor(np.zeros((1, 1, 4))),) * 3)


def test_mha_with_biases_gradcheck(rng):
    p = MHAParams.init(rng, 4, 2, bias=True)
    q, k = Tensor(rng.standard_normal((2, 3, 4))), Tensor(rng.standard_normal((2, 2, 4)))
    w = Tensor(rng.standard_normal((2, 3, 4)))
    report = gradcheck(lambda: (mha(p, q, k, k)[0] * w).sum(), dict(named_parameters(p)))
    # a key bias shifts every score in a row equally, so its true gradient is zero
    key_bias = next(c for c in report.checks if c.name == "b_K")
    assert abs(key_bias.analytic) < 1e-9 and abs(key_bias.numeric) < 1e-9
    assert all(c.max_rel_err < 1e-4 for c in report.checks if c.name != "b_K"), report.format()


def _stack(rng, depth, D=4, heads=2):
    return [MambaFormerLayerParams.init(rng, D, heads) for _ in range(depth)]


def test_mambaformer_residual_only(rng):
    layers = _stack(rng, 2)
    for layer in layers:
        layer.kernel.data[:] = 0
        layer.conv_bias.data[:] = 0
        layer.self_attn.W_V.data[:] = 0
    x = rng.standard_normal((2, 3, 4))
    np.testing.assert_array_equal(mambaformer_encode(layers, Tensor(x)).data, x)


def test_mambaformer_empty_stack(rng):
    x = Tensor(rng.standard_normal((2, 1, 4)))
    assert mambaformer_encode([], x) is x


@pytest.mark.parametrize("L", [1, 3])
def test_mambaformer_matches_reference(rng, L):
    layers = _stack(rng, 2)
    x = rng.standard_normal((2, L, 4))
    named = {}
    for d, layer in enumerate(layers):
        named.update(_named(f"enc.{d}", layer))
    ref = oracle.mambaformer(named, "enc", 2, 2, x)
    out = mambaformer_encode(layers, Tensor(x))
    assert out.shape == x.shape
    np.testing.assert_allclose(out.data, ref, atol=1e-12)


def test_mambaformer_gradcheck(rng):
    layers = _stack(rng, 2)
    x = Tensor(rng.standard_normal((2, 3, 4)))
    w = Tensor(rng.standard_normal((2, 3, 4)))
    params = {f"{d}.{n}": t for d, layer in enumerate(layers) for n, t in named_parameters(layer)}
    report = gradcheck(lambda: (mambaformer_encode(layers, x) * w).sum(), params)
    assert report.passed, report.format()


def test_mambaformer_even_kernel_rejected(rng):
    with pytest.raises(ValueError):
        MambaFormerLayerParams.init(rng, 4, 2, kernel_size=4)


def test_dropout_eval_is_identity(rng):
    x = Tensor(rng.standard_normal(10))
    assert dropout(DropoutConfig(0.5, "eval"), x, rng) is x


def test_dropout_p_zero_is_identity(rng):
    x = Tensor(rng.standard_normal(10))
    assert dropout(DropoutConfig(0.0, "train"), x, rng) is x


def test_dropout_statistics(rng):
    x = Tensor(np.ones(100_000))
    out = dropout(DropoutConfig(0.5, "train"), x, rng).data
    assert abs(np.mean(out != 0) - 0.5) < 0.01
    assert abs(out.mean() - 1.0) < 0.02
    assert set(np.unique(out)) <= {0.0, 2.0}


def test_dropout_rejects_p_one():
    with pytest.raises(ValueError):
        DropoutConfig(1.0, "train")
