"""Label-attention multi-label text coding on a small numpy autodiff core."""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import CodeVocabulary, ProcessedDocument, RawDocument, Vocabulary
from .metrics import MetricReport, compute_report, evaluate
from .model import ForwardTrace, JointConfig, LaatConfig, LaatModel
from .synthetic import SyntheticSpec, generate_synthetic_corpus
from .tensor import Tensor, backward, new_tape, no_grad
from .train import TrainConfig, fit

__version__ = "0.1.0"

__all__ = [
    "Checkpoint", "CodeVocabulary", "ForwardTrace", "JointConfig", "LaatConfig", "LaatModel",
    "MetricReport", "ProcessedDocument", "RawDocument", "SyntheticSpec", "Tensor", "TrainConfig",
    "Vocabulary", "backward", "compute_report", "evaluate", "fit", "generate_synthetic_corpus",
    "load_checkpoint", "new_tape", "no_grad", "save_checkpoint",
]
