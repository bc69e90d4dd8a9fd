"""End-to-end finite-difference check of every parameter group.

The relative error of a group is ``||g_a - g_n|| / max(||g_a|| + ||g_n||, 1e-12)``
where ``g_a`` is the backpropagated gradient and ``g_n`` the central
difference estimate.  Dropout stays active, with the generator re-seeded for
every evaluation so all evaluations share one mask.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import ProcessedDocument
from .model import JointConfig, LaatConfig, LaatModel
from .train import document_loss

DEFAULT_TOLERANCE = 1e-4


@dataclass
class GradcheckReport:
    mode: str
    errors: dict[str, float]
    tolerance: float = DEFAULT_TOLERANCE
    failed: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.failed = [k for k, v in self.errors.items() if not v <= self.tolerance]

    @property
    def passed(self) -> bool:
        return not self.failed

    def lines(self) -> list[str]:
        return [f"{'PASS' if v <= self.tolerance else 'FAIL'} {self.mode:<9} {k:<16} "
                f"max_rel_err={v:.3e}" for k, v in self.errors.items()]


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    diff = np.linalg.norm(analytic - numeric)
    return float(diff / max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12))


def _loss(model: LaatModel, doc: ProcessedDocument, seed: int, backprop: bool) -> float:
    rng = np.random.default_rng(seed)
    if backprop:
        with T.new_tape():
            loss = document_loss(model, model.forward_document(doc, True, rng), doc)
            T.backward(loss)
        return loss.item()
    with T.no_grad():
        return document_loss(model, model.forward_document(doc, True, rng), doc).item()


def check_model(model: LaatModel, doc: ProcessedDocument, seed: int = 0, eps: float = 1e-5,
                perturb: str | None = None, mode: str = "",
                tolerance: float = DEFAULT_TOLERANCE) -> GradcheckReport:
    """Compare analytic and numeric gradients for each parameter of ``model``.

    ``perturb`` names a group whose analytic gradient is deliberately corrupted
    (fault injection for testing the checker itself).
    """
    model.zero_grad()
    _loss(model, doc, seed, backprop=True)
    errors = {}
    for name, p in model.params.items():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        if name == perturb:
            analytic = analytic + 1e-2 * (np.abs(analytic).max() + 1.0)
        numeric = np.zeros_like(p.data)
        flat, nflat = p.data.reshape(-1), numeric.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            up = _loss(model, doc, seed, backprop=False)
            flat[i] = old - eps
            down = _loss(model, doc, seed, backprop=False)
            flat[i] = old
            nflat[i] = (up - down) / (2 * eps)
        errors[name] = relative_error(analytic, numeric)
    model.zero_grad()
    return GradcheckReport(mode or ("jointlaat" if model.config.joint else "laat"), errors, tolerance)


def tiny_setup(seed: int = 0, joint: bool = False, encoder_kind: str = "bilstm",
               attention_kind: str = "laat", u: int = 3, d_a: int = 3, num_labels: int = 4,
               n: int = 5, vocab_size: int = 9, d_e: int = 4,
               dropout_p: float = 0.3) -> tuple[LaatModel, ProcessedDocument]:
    """A small random model and document for gradient checking."""
    rng = np.random.default_rng(seed)
    cfg = LaatConfig(vocab_size=vocab_size, num_labels=num_labels, d_e=d_e, u=u, d_a=d_a,
                     encoder_kind=encoder_kind, attention_kind=attention_kind,
                     dropout_p=dropout_p, cnn_width=3,
                     joint=JointConfig(num_normalized_labels=2, p=2) if joint else None)
    model = LaatModel(cfg, rng)
    # move away from the zero-bias init so every gradient path is exercised
    for p in model.params.values():
        p.data = p.data + rng.normal(scale=0.3, size=p.shape)
    ids = rng.integers(2, vocab_size, size=n)
    gold = (rng.random(num_labels) < 0.5).astype(float)
    parent_of = np.arange(num_labels) % 2
    gold_norm = np.array([float(gold[parent_of == j].any()) for j in range(2)])
    return model, ProcessedDocument(ids, n, gold, gold_norm)


def run_gradcheck(seed: int = 0, perturb: str | None = None,
                  tolerance: float = DEFAULT_TOLERANCE) -> list[GradcheckReport]:
    """LAAT and JointLAAT checks on a u=3, d_a=3, |L|=4, n=5 model."""
    reports = []
    for joint in (False, True):
        model, doc = tiny_setup(seed, joint=joint)
        reports.append(check_model(model, doc, seed, perturb=perturb, tolerance=tolerance))
    return reports
