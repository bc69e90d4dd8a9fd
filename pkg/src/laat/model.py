"""Label attention network and its hierarchical joint extension.

The document pipeline is embed -> encode -> label attention -> per-label
output layer.  Matrices follow the column convention: the encoder output H is
2u x n, attention weights A are |L| x n and label vectors V are 2u x |L|.

Encoder variants: ``bilstm`` (default), ``bigru`` and ``cnn``.  Attention
variants: ``laat`` (tanh projection then per-label scoring) and ``caml``
(per-label scoring straight off H).  With ``joint`` configured, a first level
predicts normalized codes; its probability vector is projected to ``s_D`` and
appended to every second-level label vector.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Iterator

import numpy as np

from . import tensor as T
from .recurrent import conv1d_same, gru_direction, lstm_direction, pad_columns
from .tensor import Tensor

ENCODERS = ("bilstm", "bigru", "cnn")
ATTENTIONS = ("laat", "caml")


class ConfigError(ValueError):
    pass


@dataclass
class JointConfig:
    num_normalized_labels: int
    p: int = 128


@dataclass
class LaatConfig:
    vocab_size: int
    num_labels: int
    d_e: int = 100
    u: int = 256
    d_a: int = 256
    encoder_kind: str = "bilstm"
    attention_kind: str = "laat"
    dropout_p: float = 0.3
    joint: JointConfig | None = None
    cnn_width: int = 9
    freeze_embeddings: bool = False

    def __post_init__(self):
        if isinstance(self.joint, dict):
            self.joint = JointConfig(**self.joint)
        self.validate()

    def validate(self) -> None:
        for name in ("vocab_size", "num_labels", "d_e", "u", "d_a", "cnn_width"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.encoder_kind not in ENCODERS:
            raise ConfigError(f"encoder_kind must be one of {ENCODERS}, got {self.encoder_kind!r}")
        if self.attention_kind not in ATTENTIONS:
            raise ConfigError(f"attention_kind must be one of {ATTENTIONS}, got {self.attention_kind!r}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must lie in [0, 1), got {self.dropout_p}")
        if self.cnn_width % 2 == 0:
            raise ConfigError("cnn_width must be odd")
        if self.joint is not None:
            if self.joint.num_normalized_labels < 1 or self.joint.p < 1:
                raise ConfigError("joint sizes must be >= 1")
            if self.joint.num_normalized_labels > self.num_labels:
                raise ConfigError("joint: more normalized labels than raw labels")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> LaatConfig:
        return cls(**d)


def parameter_shapes(cfg: LaatConfig) -> dict[str, tuple[int, ...]]:
    """Ordered parameter names and shapes for ``cfg``."""
    u2 = 2 * cfg.u
    shapes: dict[str, tuple[int, ...]] = {"embedding": (cfg.vocab_size, cfg.d_e)}
    if cfg.encoder_kind == "bilstm":
        for d in ("fwd", "bwd"):
            shapes[f"lstm_{d}.w_ih"] = (4 * cfg.u, cfg.d_e)
            shapes[f"lstm_{d}.w_hh"] = (4 * cfg.u, cfg.u)
            shapes[f"lstm_{d}.bias"] = (4 * cfg.u,)
    elif cfg.encoder_kind == "bigru":
        for d in ("fwd", "bwd"):
            shapes[f"gru_{d}.w_ih"] = (3 * cfg.u, cfg.d_e)
            shapes[f"gru_{d}.w_hh"] = (3 * cfg.u, cfg.u)
            shapes[f"gru_{d}.b_ih"] = (3 * cfg.u,)
            shapes[f"gru_{d}.b_hh"] = (3 * cfg.u,)
    else:
        shapes["cnn.weight"] = (u2, cfg.cnn_width * cfg.d_e)
        shapes["cnn.bias"] = (u2,)

    def attention(prefix: str, labels: int) -> None:
        if cfg.attention_kind == "laat":
            shapes[f"{prefix}.W"] = (cfg.d_a, u2)
            shapes[f"{prefix}.U"] = (labels, cfg.d_a)
        else:
            shapes[f"{prefix}.U"] = (labels, u2)

    if cfg.joint is not None:
        l1 = cfg.joint.num_normalized_labels
        attention("attn1", l1)
        shapes["out1.weight"] = (l1, u2)
        shapes["out1.bias"] = (l1,)
        shapes["proj.P"] = (cfg.joint.p, l1)
    attention("attn", cfg.num_labels)
    extra = cfg.joint.p if cfg.joint is not None else 0
    shapes["out.weight"] = (cfg.num_labels, u2 + extra)
    shapes["out.bias"] = (cfg.num_labels,)
    return shapes


def parameter_count(cfg: LaatConfig) -> int:
    """Closed-form number of trainable scalars."""
    u, de, L = cfg.u, cfg.d_e, cfg.num_labels
    n = cfg.vocab_size * de
    n += {"bilstm": 2 * (4 * u * (de + u) + 4 * u),
          "bigru": 2 * (3 * u * (de + u) + 6 * u),
          "cnn": 2 * u * (cfg.cnn_width * de + 1)}[cfg.encoder_kind]

    def attention(labels: int) -> int:
        return cfg.d_a * 2 * u + labels * cfg.d_a if cfg.attention_kind == "laat" else labels * 2 * u

    n += attention(L) + L * (2 * u + 1)
    if cfg.joint is not None:
        l1, p = cfg.joint.num_normalized_labels, cfg.joint.p
        n += attention(l1) + l1 * (2 * u + 1) + p * l1 + L * p
    return n


@dataclass
class ForwardTrace:
    H: Tensor
    A: Tensor
    V: Tensor
    logits: Tensor
    probs: Tensor
    level1_A: Tensor | None = None
    level1_logits: Tensor | None = None
    level1_probs: Tensor | None = None
    s_D: Tensor | None = None
    extras: dict = field(default_factory=dict)


class LaatModel:
    def __init__(self, config: LaatConfig, rng: np.random.Generator | None = None,
                 embeddings: np.ndarray | None = None):
        self.config = config
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params: dict[str, Tensor] = {}
        for name, shape in parameter_shapes(config).items():
            self.params[name] = Tensor(_init(name, shape, rng), requires_grad=True, name=name)
        if embeddings is not None:
            if embeddings.shape != (config.vocab_size, config.d_e):
                raise ConfigError(f"embedding matrix {embeddings.shape} does not match "
                                  f"({config.vocab_size}, {config.d_e})")
            self.params["embedding"].data = np.array(embeddings, dtype=np.float64)
        if config.freeze_embeddings:
            self.params["embedding"].requires_grad = False

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def trainable(self) -> Iterator[tuple[str, Tensor]]:
        for name, p in self.params.items():
            if p.requires_grad:
                yield name, p

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        if set(state) != set(self.params):
            raise ConfigError(f"state keys differ: {sorted(set(state) ^ set(self.params))}")
        for k, v in state.items():
            if v.shape != self.params[k].shape:
                raise ConfigError(f"parameter {k}: shape {v.shape} != {self.params[k].shape}")
            self.params[k].data = np.array(v, dtype=np.float64)

    def forward(self, token_ids, valid_len: int | None = None, training: bool = False,
                rng: np.random.Generator | None = None) -> ForwardTrace:
        if self.config.joint is not None:
            return forward_joint(self, token_ids, valid_len, training, rng)
        return forward_laat(self, token_ids, valid_len, training, rng)

    def forward_document(self, doc, training: bool = False,
                         rng: np.random.Generator | None = None) -> ForwardTrace:
        return self.forward(doc.token_ids, doc.valid_len, training, rng)


def _init(name: str, shape: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    if name == "embedding":
        w = rng.uniform(-0.1, 0.1, size=shape)
        w[0] = 0.0
        return w
    if len(shape) == 1:
        b = np.zeros(shape)
        if name.startswith("lstm_") and name.endswith(".bias"):
            u = shape[0] // 4
            b[u:2 * u] = 1.0
        return b
    limit = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-limit, limit, size=shape)


# ---------------------------------------------------------------------------
# pipeline stages

def embed(token_ids, table: Tensor, dropout_p: float = 0.0, training: bool = False,
          rng: np.random.Generator | None = None) -> Tensor:
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.size == 0:
        raise ValueError("cannot embed an empty token sequence")
    x = T.take_rows(table, ids).T
    return T.dropout(x, dropout_p, training, rng)


def encode(x: Tensor, model: LaatModel, valid_len: int) -> Tensor:
    cfg, p = model.config, model.params
    n = x.shape[1]
    if not 1 <= valid_len <= n:
        raise ValueError(f"valid_len must lie in 1..{n}, got {valid_len}")
    xv = x[:, :valid_len] if valid_len < n else x
    if cfg.encoder_kind == "bilstm":
        hf = lstm_direction(xv, p["lstm_fwd.w_ih"], p["lstm_fwd.w_hh"], p["lstm_fwd.bias"])
        hb = lstm_direction(xv, p["lstm_bwd.w_ih"], p["lstm_bwd.w_hh"], p["lstm_bwd.bias"],
                            reverse=True)
        hv = T.concat([hf, hb], axis=0)
    elif cfg.encoder_kind == "bigru":
        hf = gru_direction(xv, p["gru_fwd.w_ih"], p["gru_fwd.w_hh"],
                           p["gru_fwd.b_ih"], p["gru_fwd.b_hh"])
        hb = gru_direction(xv, p["gru_bwd.w_ih"], p["gru_bwd.w_hh"],
                           p["gru_bwd.b_ih"], p["gru_bwd.b_hh"], reverse=True)
        hv = T.concat([hf, hb], axis=0)
    else:
        hv = conv1d_same(xv, p["cnn.weight"], p["cnn.bias"], cfg.cnn_width)
    return pad_columns(hv, n)


def _attend(H: Tensor, logits_valid: Tensor, valid_len: int) -> tuple[Tensor, Tensor]:
    n = H.shape[1]
    A = T.masked_softmax_rows(pad_columns(logits_valid, n), valid_len)
    hv = H[:, :valid_len] if valid_len < n else H
    av = A[:, :valid_len] if valid_len < n else A
    return A, hv @ av.T


def label_attention(H: Tensor, W: Tensor, U: Tensor, valid_len: int) -> tuple[Tensor, Tensor]:
    """Z = tanh(W H), A = softmax_rows(U Z) over valid columns, V = H A^T."""
    if W.shape[1] != H.shape[0] or U.shape[1] != W.shape[0]:
        raise T.ShapeError(f"attention shapes W {W.shape}, U {U.shape} incompatible with H {H.shape}")
    hv = H[:, :valid_len] if valid_len < H.shape[1] else H
    return _attend(H, U @ T.tanh(W @ hv), valid_len)


def caml_attention(H: Tensor, U: Tensor, valid_len: int) -> tuple[Tensor, Tensor]:
    """A = softmax_rows(U H), V = H A^T."""
    if U.shape[1] != H.shape[0]:
        raise T.ShapeError(f"attention matrix U {U.shape} incompatible with H {H.shape}")
    hv = H[:, :valid_len] if valid_len < H.shape[1] else H
    return _attend(H, U @ hv, valid_len)


def output_scores(V: Tensor, weight: Tensor, bias: Tensor) -> tuple[Tensor, Tensor]:
    """Label-specific logistic units: logit_i = w_i . v_i + b_i."""
    if weight.shape != V.T.shape:
        raise T.ShapeError(f"output weight {weight.shape} does not match V^T {V.T.shape}")
    logits = (weight * V.T).sum(axis=1) + bias
    return logits, T.sigmoid(logits)


def _attention(model: LaatModel, prefix: str, H: Tensor, valid_len: int):
    p = model.params
    if model.config.attention_kind == "laat":
        return label_attention(H, p[f"{prefix}.W"], p[f"{prefix}.U"], valid_len)
    return caml_attention(H, p[f"{prefix}.U"], valid_len)


def _shared_encoding(model, token_ids, valid_len, training, rng) -> tuple[Tensor, int]:
    cfg = model.config
    ids = np.asarray(token_ids, dtype=np.int64)
    valid_len = len(ids) if valid_len is None else int(valid_len)
    x = embed(ids, model.params["embedding"], cfg.dropout_p, training, rng)
    H = encode(x, model, valid_len)
    return T.dropout(H, cfg.dropout_p, training, rng), valid_len


def forward_laat(model: LaatModel, token_ids, valid_len: int | None = None,
                 training: bool = False, rng: np.random.Generator | None = None) -> ForwardTrace:
    H, vl = _shared_encoding(model, token_ids, valid_len, training, rng)
    A, V = _attention(model, "attn", H, vl)
    w = model.params["out.weight"]
    if model.config.joint is not None:
        w = w[:, :V.shape[0]]
    logits, probs = output_scores(V, w, model.params["out.bias"])
    return ForwardTrace(H, A, V, logits, probs)


def forward_joint(model: LaatModel, token_ids, valid_len: int | None = None,
                  training: bool = False, rng: np.random.Generator | None = None) -> ForwardTrace:
    if model.config.joint is None:
        raise ConfigError("forward_joint needs a model configured with a joint head")
    p = model.params
    H, vl = _shared_encoding(model, token_ids, valid_len, training, rng)
    A1, V1 = _attention(model, "attn1", H, vl)
    logits1, q = output_scores(V1, p["out1.weight"], p["out1.bias"])
    s = p["proj.P"] @ q
    A, V = _attention(model, "attn", H, vl)
    u2 = V.shape[0]
    w = p["out.weight"]
    logits = ((w[:, :u2] * V.T).sum(axis=1) + w[:, u2:] @ s) + p["out.bias"]
    return ForwardTrace(H, A, V, logits, T.sigmoid(logits), A1, logits1, q, s)


def predict(probs, threshold: float = 0.5) -> np.ndarray:
    """Binary decisions; a probability equal to the threshold counts as positive."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    probs = probs.data if isinstance(probs, Tensor) else np.asarray(probs)
    return (probs >= threshold).astype(np.int64)
