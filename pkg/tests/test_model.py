import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from laat import tensor as T
from laat.model import (
    ConfigError,
    JointConfig,
    LaatConfig,
    LaatModel,
    caml_attention,
    label_attention,
    output_scores,
    parameter_count,
    parameter_shapes,
    predict,
)
from laat.tensor import Tensor


def attention_oracle(H, W, U):
    """Per-label loops, no matrix products across labels."""
    n = H.shape[1]
    Z = np.tanh(W @ H)
    A = np.zeros((U.shape[0], n))
    V = np.zeros((H.shape[0], U.shape[0]))
    for i in range(U.shape[0]):
        s = [float(U[i] @ Z[:, t]) for t in range(n)]
        m = max(s)
        e = [math.exp(v - m) for v in s]
        tot = sum(e)
        A[i] = [v / tot for v in e]
        V[:, i] = sum(A[i, t] * H[:, t] for t in range(n))
    return A, V


def random_instance(rng):
    u2, d_a, L, n = (int(rng.integers(1, 7)) for _ in range(4))
    return (rng.normal(size=(u2, n)), rng.normal(size=(d_a, u2)), rng.normal(size=(L, d_a)))


def test_label_attention_matches_loop_oracle():
    rng = np.random.default_rng(11)
    for _ in range(100):
        H, W, U = random_instance(rng)
        A, V = label_attention(Tensor(H), Tensor(W), Tensor(U), H.shape[1])
        Ao, Vo = attention_oracle(H, W, U)
        np.testing.assert_allclose(A.data, Ao, atol=1e-12)
        np.testing.assert_allclose(V.data, Vo, atol=1e-12)


def test_caml_attention_matches_oracle():
    rng = np.random.default_rng(2)
    H, U = rng.normal(size=(4, 6)), rng.normal(size=(3, 4))
    A, V = caml_attention(Tensor(H), Tensor(U), 6)
    logits = U @ H
    Ao = np.exp(logits - logits.max(1, keepdims=True))
    Ao /= Ao.sum(1, keepdims=True)
    np.testing.assert_allclose(A.data, Ao, atol=1e-12)
    np.testing.assert_allclose(V.data, H @ Ao.T, atol=1e-12)


def test_attention_uniform_when_U_is_zero():
    rng = np.random.default_rng(0)
    H = rng.normal(size=(4, 5))
    A, V = label_attention(Tensor(H), Tensor(rng.normal(size=(3, 4))), Tensor(np.zeros((2, 3))), 5)
    np.testing.assert_allclose(A.data, 0.2, atol=1e-15)
    np.testing.assert_allclose(V.data[:, 0], H.mean(axis=1), atol=1e-12)


def test_attention_shape_errors():
    H = Tensor(np.zeros((4, 5)))
    with pytest.raises(T.ShapeError):
        label_attention(H, Tensor(np.zeros((3, 5))), Tensor(np.zeros((2, 3))), 5)
    with pytest.raises(T.ShapeError):
        caml_attention(H, Tensor(np.zeros((2, 3))), 5)
    with pytest.raises(T.ShapeError):
        output_scores(Tensor(np.zeros((4, 2))), Tensor(np.zeros((3, 4))), Tensor(np.zeros(3)))


def test_output_scores_is_row_dot():
    V = np.array([[1.0, 2.0], [3.0, 4.0]])
    w = np.array([[1.0, 0.0], [0.5, 0.5]])
    logits, probs = output_scores(Tensor(V), Tensor(w), Tensor([0.0, -1.0]))
    np.testing.assert_allclose(logits.data, [1.0, 2.0])
    np.testing.assert_allclose(probs.data, 1 / (1 + np.exp(-logits.data)))


# -- model ---------------------------------------------------------------------

def small_config(**kw):
    base = dict(vocab_size=12, num_labels=5, d_e=4, u=3, d_a=3, dropout_p=0.0, cnn_width=3)
    base.update(kw)
    return LaatConfig(**base)


VARIANTS = [dict(encoder_kind=e, attention_kind=a) for e in ("bilstm", "bigru", "cnn")
            for a in ("laat", "caml")]


@pytest.mark.parametrize("kw", VARIANTS + [dict(joint=JointConfig(2, 3))],
                         ids=lambda kw: "-".join(str(v) for v in kw.values()))
def test_parameter_count_closed_form(kw):
    cfg = small_config(**kw)
    model = LaatModel(cfg)
    assert model.num_parameters() == parameter_count(cfg)
    assert sum(math.prod(s) for s in parameter_shapes(cfg).values()) == parameter_count(cfg)


def test_reference_configuration_sizes():
    cfg = LaatConfig(vocab_size=1000, num_labels=50)
    assert (cfg.d_e, cfg.u, cfg.d_a, cfg.dropout_p) == (100, 256, 256, 0.3)
    shapes = parameter_shapes(cfg)
    assert shapes["attn.W"] == (256, 512) and shapes["attn.U"] == (50, 256)
    assert shapes["out.weight"] == (50, 512)


def test_init_rules():
    model = LaatModel(small_config(), np.random.default_rng(0))
    p = model.params
    assert (p["embedding"].data[0] == 0).all()
    assert np.abs(p["embedding"].data).max() <= 0.1
    np.testing.assert_array_equal(p["lstm_fwd.bias"].data[3:6], 1.0)
    assert (p["out.bias"].data == 0).all()
    lim = np.sqrt(6 / (3 + 6))
    assert np.abs(p["attn.W"].data).max() <= lim


@pytest.mark.parametrize("kw", VARIANTS, ids=lambda kw: "-".join(kw.values()))
def test_forward_shapes_every_variant(kw):
    model = LaatModel(small_config(**kw), np.random.default_rng(0))
    tr = model.forward([2, 3, 4, 5, 6, 7, 8])
    assert tr.H.shape == (6, 7) and tr.A.shape == (5, 7) and tr.V.shape == (6, 5)
    assert tr.probs.shape == (5,)
    np.testing.assert_allclose(tr.A.data.sum(axis=1), 1.0, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(range(len(VARIANTS))), st.integers(1, 8), st.integers(0, 5),
       st.integers(0, 999), st.booleans())
def test_padding_invariance(variant, n, pad, seed, joint):
    kw = dict(VARIANTS[variant])
    if joint:
        kw["joint"] = JointConfig(2, 2)
    model = LaatModel(small_config(**kw), np.random.default_rng(seed))
    ids = np.random.default_rng(seed + 1).integers(2, 12, size=n)
    clean = model.forward(ids)
    padded = model.forward(np.r_[ids, np.zeros(pad, dtype=int)], valid_len=n)
    np.testing.assert_array_equal(clean.logits.data, padded.logits.data)
    assert (padded.A.data[:, n:] == 0).all()


def test_empty_document_rejected():
    model = LaatModel(small_config())
    with pytest.raises(ValueError):
        model.forward([])
    with pytest.raises(ValueError):
        model.forward([0, 0], valid_len=0)


def test_joint_with_zero_projection_equals_plain_laat():
    rng = np.random.default_rng(4)
    plain = LaatModel(small_config(), rng)
    joint = LaatModel(small_config(joint=JointConfig(2, 3)), np.random.default_rng(9))
    for name in ("embedding", "lstm_fwd.w_ih", "lstm_fwd.w_hh", "lstm_fwd.bias",
                 "lstm_bwd.w_ih", "lstm_bwd.w_hh", "lstm_bwd.bias", "attn.W", "attn.U", "out.bias"):
        joint.params[name].data = plain.params[name].data.copy()
    joint.params["out.weight"].data[:, :6] = plain.params["out.weight"].data
    joint.params["proj.P"].data[:] = 0.0
    ids = [3, 4, 5, 6]
    np.testing.assert_array_equal(joint.forward(ids).logits.data, plain.forward(ids).logits.data)
    # zeroing the extra weight columns instead has the same effect
    joint.params["proj.P"].data = rng.normal(size=(3, 2))
    joint.params["out.weight"].data[:, 6:] = 0.0
    np.testing.assert_array_equal(joint.forward(ids).logits.data, plain.forward(ids).logits.data)


def test_joint_trace_contents():
    model = LaatModel(small_config(joint=JointConfig(2, 3)), np.random.default_rng(0))
    tr = model.forward([2, 3, 4])
    assert tr.level1_logits.shape == (2,) and tr.s_D.shape == (3,)
    np.testing.assert_allclose(tr.s_D.data, model["proj.P"].data @ tr.level1_probs.data)


def test_dropout_only_in_training():
    model = LaatModel(small_config(dropout_p=0.5), np.random.default_rng(0))
    ids = [2, 3, 4, 5]
    a = model.forward(ids).logits.data
    b = model.forward(ids).logits.data
    np.testing.assert_array_equal(a, b)
    c = model.forward(ids, training=True, rng=np.random.default_rng(1)).logits.data
    assert not np.array_equal(a, c)


def test_freeze_embeddings():
    model = LaatModel(small_config(freeze_embeddings=True))
    assert "embedding" not in dict(model.trainable())


def test_state_dict_roundtrip_and_errors():
    a = LaatModel(small_config(), np.random.default_rng(0))
    b = LaatModel(small_config(), np.random.default_rng(1))
    b.load_state_dict(a.state_dict())
    np.testing.assert_array_equal(a.forward([2, 3]).logits.data, b.forward([2, 3]).logits.data)
    bad = a.state_dict()
    bad["attn.W"] = np.zeros((1, 1))
    with pytest.raises(ConfigError):
        b.load_state_dict(bad)
    del bad["attn.W"]
    with pytest.raises(ConfigError):
        b.load_state_dict(bad)


def test_config_validation():
    with pytest.raises(ConfigError):
        small_config(encoder_kind="transformer")
    with pytest.raises(ConfigError):
        small_config(dropout_p=1.0)
    with pytest.raises(ConfigError):
        small_config(cnn_width=4)
    with pytest.raises(ConfigError):
        small_config(joint=JointConfig(9, 2))
    cfg = small_config(joint=JointConfig(2, 3))
    assert LaatConfig.from_dict(cfg.to_dict()) == cfg


def test_embedding_matrix_shape_checked():
    with pytest.raises(ConfigError):
        LaatModel(small_config(), embeddings=np.zeros((3, 3)))


def test_predict_threshold():
    np.testing.assert_array_equal(predict(np.array([0.49, 0.5, 0.51])), [0, 1, 1])
    with pytest.raises(ValueError):
        predict(np.array([0.5]), threshold=1.0)
