"""Command-line interface: gen-corpus, train, evaluate, predict, gradcheck.

Exit codes: 0 success, 1 validation or configuration error, 2 runtime failure.

A training run writes::

    <output_dir>/config.json            the fully resolved run configuration
    <output_dir>/checkpoints/seed<N>.ckpt
    <output_dir>/logs/seed<N>.jsonl     one JSON record per epoch
    <output_dir>/reports/seed<N>.validation.{json,txt}
    <output_dir>/reports/summary.json   mean and std over seeds

``LAAT_OUTPUT_DIR`` replaces the output directory named in a config file; an
explicit ``--output`` flag wins over both.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .data import (
    DEFAULT_MAX_LEN,
    CorpusFormatError,
    EmbeddingFormatError,
    EmptyDocumentError,
    Vocabulary,
    build_code_vocabulary,
    load_embeddings,
    preprocess,
    process_corpus,
    read_corpus,
    split_by_patient,
    write_corpus,
)
from .gradcheck import run_gradcheck
from .metrics import MetricReport, evaluate, top_k
from .model import ConfigError, JointConfig, LaatConfig, LaatModel
from .synthetic import InfeasibleSpecError, SyntheticSpec, generate_synthetic_corpus
from .train import FitResult, TrainConfig, fit, seed_streams

log = logging.getLogger("laat")

OUTPUT_ENV = "LAAT_OUTPUT_DIR"
SPLITS = ("train", "validation", "test")
HEADLINE = ("macro_auc", "micro_auc", "macro_f1", "micro_f1", "p@5", "p@8", "p@15")

# model hyper-parameters a config file may set; sizes come from the data
MODEL_KEYS = ("d_e", "u", "d_a", "encoder_kind", "attention_kind", "dropout_p", "cnn_width",
              "freeze_embeddings")


class UsageError(ValueError):
    """Bad configuration or input; maps to exit code 1."""


VALIDATION_ERRORS = (UsageError, ConfigError, InfeasibleSpecError, CorpusFormatError,
                     EmbeddingFormatError, EmptyDocumentError, CheckpointError,
                     FileNotFoundError, json.JSONDecodeError)


# ---------------------------------------------------------------------------
# run configuration

@dataclass
class DataPaths:
    train: str = ""
    validation: str = ""
    test: str = ""
    embeddings: str | None = None
    max_len: int = DEFAULT_MAX_LEN


@dataclass
class RunConfig:
    model_name: str = "laat"
    model: dict = field(default_factory=dict)
    joint_p: int = 128
    training: TrainConfig = field(default_factory=TrainConfig)
    data: DataPaths = field(default_factory=DataPaths)
    output_dir: str = "runs/laat"
    seeds: list[int] = field(default_factory=lambda: [0])

    def validate(self) -> None:
        if self.model_name not in ("laat", "jointlaat"):
            raise UsageError(f"model must be laat or jointlaat, got {self.model_name!r}")
        unknown = set(self.model) - set(MODEL_KEYS)
        if unknown:
            raise UsageError(f"unknown model keys: {sorted(unknown)}")
        if not self.seeds:
            raise UsageError("at least one seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise UsageError("seeds must be distinct")
        for split in SPLITS:
            path = getattr(self.data, split)
            if not path:
                if split == "test":
                    continue
                raise UsageError(f"data.{split} is not set")
            if not Path(path).is_file():
                raise UsageError(f"data.{split}: no such file {path}")
        if self.data.embeddings and not Path(self.data.embeddings).is_file():
            raise UsageError(f"data.embeddings: no such file {self.data.embeddings}")
        if self.data.max_len < 1:
            raise UsageError("data.max_len must be positive")
        # surface model hyper-parameter errors before any data is read
        LaatConfig(vocab_size=2, num_labels=2, **self.model)

    def to_dict(self) -> dict:
        return {"model_name": self.model_name, "model": dict(self.model), "joint_p": self.joint_p,
                "training": self.training.to_dict(), "data": asdict(self.data),
                "output_dir": self.output_dir, "seeds": list(self.seeds)}

    @classmethod
    def from_dict(cls, d: dict) -> RunConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        try:
            if "training" in d:
                d["training"] = TrainConfig(**d["training"])
            if "data" in d:
                d["data"] = DataPaths(**d["data"])
        except (TypeError, ValueError) as exc:
            raise UsageError(f"invalid config: {exc}") from None
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> RunConfig:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def resolve_output_dir(config_value: str, flag: str | None) -> Path:
    if flag:
        return Path(flag)
    return Path(os.environ.get(OUTPUT_ENV) or config_value)


# ---------------------------------------------------------------------------
# training pipeline (also used directly by tests and demos)

@dataclass
class PreparedData:
    vocab: Vocabulary
    codes: object
    train: list
    validation: list
    test: list | None
    embeddings: np.ndarray | None
    corpus_vocab_hash: str


def prepare_data(cfg: RunConfig, seed: int) -> PreparedData:
    raw = {s: read_corpus(getattr(cfg.data, s)) for s in SPLITS if getattr(cfg.data, s)}
    if not raw["train"] or not raw["validation"]:
        raise UsageError("train and validation corpora must be non-empty")
    codes = build_code_vocabulary(raw["train"])
    if cfg.model_name == "jointlaat" and not codes.has_hierarchy:
        raise UsageError("--model jointlaat needs hierarchical codes (e.g. 401.9 under 401); "
                         "no training code has a sub-category")
    vocab = Vocabulary.from_corpus(raw["train"], cfg.data.max_len)
    corpus_hash = vocab.hash()
    matrix = None
    if cfg.data.embeddings:
        table = load_embeddings(cfg.data.embeddings, vocab, seed=seed)
        d_e = cfg.model.get("d_e", LaatConfig.__dataclass_fields__["d_e"].default)
        if table.dim != d_e:
            raise UsageError(f"embedding file has dimension {table.dim}, model d_e is {d_e}")
        vocab, matrix = table.vocab, table.matrix
    proc = {s: process_corpus(docs, vocab, codes, cfg.data.max_len) for s, docs in raw.items()}
    return PreparedData(vocab, codes, proc["train"], proc["validation"], proc.get("test"), matrix,
                        corpus_hash)


def build_model(cfg: RunConfig, data: PreparedData, rng: np.random.Generator) -> LaatModel:
    joint = JointConfig(data.codes.num_normalized, cfg.joint_p) if cfg.model_name == "jointlaat" else None
    mcfg = LaatConfig(vocab_size=len(data.vocab), num_labels=data.codes.num_raw, joint=joint,
                      **cfg.model)
    return LaatModel(mcfg, rng, embeddings=data.embeddings)


@dataclass
class SeedRun:
    seed: int
    fit: FitResult
    report: MetricReport
    checkpoint: Path


def _write_report(report: MetricReport, stem: Path, name: str) -> None:
    Path(f"{stem}.json").write_text(report.to_json() + "\n", encoding="utf-8")
    Path(f"{stem}.txt").write_text(report.to_text(name), encoding="utf-8")


def train_seed(cfg: RunConfig, seed: int, out: Path, data: PreparedData | None = None) -> SeedRun:
    data = data or prepare_data(cfg, seed)
    streams = seed_streams(seed)
    model = build_model(cfg, data, streams["init"])
    tcfg = TrainConfig(**{**cfg.training.to_dict(), "seed": seed})
    for sub in ("checkpoints", "logs", "reports"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    ckpt_path = out / "checkpoints" / f"seed{seed}.ckpt"

    def save(m, epoch, report):
        save_checkpoint(Checkpoint(m, data.vocab, data.codes, cfg.data.max_len,
                                   {"epoch": epoch, "seed": seed, "model_name": cfg.model_name,
                                    "train_corpus": cfg.data.train,
                                    "corpus_vocab_hash": data.corpus_vocab_hash}),
                        ckpt_path)

    result = fit(model, data.train, data.validation, tcfg, data.codes.raw_codes,
                 on_improve=save, log_path=out / "logs" / f"seed{seed}.jsonl")
    if result.best_report is None:
        raise RuntimeError("training ran no epochs")
    _write_report(result.best_report, out / "reports" / f"seed{seed}.validation", cfg.model_name)
    return SeedRun(seed, result, result.best_report, ckpt_path)


def summarize(runs: list[SeedRun]) -> dict:
    summary = {"seeds": [r.seed for r in runs],
               "best_epochs": [r.fit.best_epoch for r in runs]}
    for key in HEADLINE:
        vals = [r.report.headline()[key] for r in runs]
        if any(v is None for v in vals):
            summary[key] = None
            continue
        summary[key] = {"mean": float(np.mean(vals)), "std": float(np.std(vals)), "values": vals}
    return summary


def run_training(cfg: RunConfig, out: Path) -> list[SeedRun]:
    cfg.validate()
    out.mkdir(parents=True, exist_ok=True)
    resolved = RunConfig.from_dict({**cfg.to_dict(), "output_dir": str(out)})
    (out / "config.json").write_text(json.dumps(resolved.to_dict(), indent=2, sort_keys=True) + "\n",
                                     encoding="utf-8")
    runs = []
    for seed in cfg.seeds:
        # embeddings fallback rows depend on the seed, so data is prepared per seed
        runs.append(train_seed(cfg, seed, out))
    (out / "reports" / "summary.json").write_text(
        json.dumps(summarize(runs), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return runs


# ---------------------------------------------------------------------------
# commands

def cmd_gen_corpus(args) -> int:
    spec = SyntheticSpec.load(args.spec) if args.spec else SyntheticSpec()
    corpus = generate_synthetic_corpus(spec, args.seed)
    parts = split_by_patient(corpus.documents, tuple(spec.split), args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, docs in zip(SPLITS, parts):
        write_corpus(docs, out / f"{name}.jsonl")
    meta = corpus.metadata()
    meta["seed"] = args.seed
    meta["splits"] = {name: [d.doc_id for d in docs] for name, docs in zip(SPLITS, parts)}
    (out / "metadata.json").write_text(json.dumps(meta, sort_keys=True) + "\n", encoding="utf-8")
    print(" ".join(f"{n}={len(p)}" for n, p in zip(SPLITS, parts)))
    return 0


def _parse_seeds(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--seeds expects comma-separated integers, got {text!r}") from None


def config_from_args(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    d = cfg.to_dict()
    if args.data:
        for s in SPLITS:
            path = Path(args.data) / f"{s}.jsonl"
            # the test split is optional for training
            if s != "test" or path.is_file():
                d["data"][s] = str(path)
    for s in SPLITS:
        if getattr(args, s):
            d["data"][s] = getattr(args, s)
    if args.embeddings:
        d["data"]["embeddings"] = args.embeddings
    if args.model:
        d["model_name"] = args.model
    if args.encoder:
        d["model"]["encoder_kind"] = args.encoder
    if args.attention:
        d["model"]["attention_kind"] = args.attention
    for flag, key in (("lr", "lr"), ("epochs", "max_epochs"), ("batch_size", "batch_size"),
                      ("threshold", "threshold")):
        if getattr(args, flag) is not None:
            d["training"][key] = getattr(args, flag)
    if args.seeds:
        d["seeds"] = _parse_seeds(args.seeds)
    elif args.seed is not None:
        d["seeds"] = [args.seed]
    d["output_dir"] = str(resolve_output_dir(d["output_dir"], args.output))
    return RunConfig.from_dict(d)


def cmd_train(args) -> int:
    cfg = config_from_args(args)
    runs = run_training(cfg, Path(cfg.output_dir))
    for r in runs:
        print(f"seed {r.seed}: best epoch {r.fit.best_epoch}, "
              f"val micro-F1 {r.report.micro_f1:.4f}, checkpoint {r.checkpoint}")
    if len(runs) > 1:
        s = summarize(runs)
        print("mean ± std over seeds " + ",".join(str(r.seed) for r in runs) + ":")
        for key in HEADLINE:
            v = s[key]
            print(f"  {key:<9} " + ("-" if v is None else f"{v['mean']:.4f} ± {v['std']:.4f}"))
    return 0


def _check_vocab(ckpt: Checkpoint, train_corpus: str | None) -> None:
    """Rebuild the training vocabulary and compare it with the one the model was trained on."""
    source = train_corpus or ckpt.extra.get("train_corpus")
    expected = ckpt.extra.get("corpus_vocab_hash")
    if not source or not expected:
        return
    if not Path(source).is_file():
        if train_corpus:
            raise UsageError(f"no such file {train_corpus}")
        return
    rebuilt = Vocabulary.from_corpus(read_corpus(source), ckpt.max_len).hash()
    if rebuilt != expected:
        raise UsageError(f"vocabulary mismatch: {source} preprocesses to vocabulary "
                         f"{rebuilt[:12]}, checkpoint was trained on {expected[:12]}")


def cmd_evaluate(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    _check_vocab(ckpt, args.train_corpus)
    docs = process_corpus(read_corpus(args.corpus), ckpt.vocab, ckpt.codes, ckpt.max_len)
    report = evaluate(ckpt.model, docs, args.threshold, ckpt.codes.raw_codes)
    name = args.name or ckpt.extra.get("model_name", "model")
    if args.output or os.environ.get(OUTPUT_ENV):
        out = resolve_output_dir("", args.output) / "reports"
        out.mkdir(parents=True, exist_ok=True)
        _write_report(report, out / f"{Path(args.corpus).stem}.eval", name)
    print(report.table_row(name))
    return 0


def cmd_predict(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    text = args.text if args.text is not None else Path(args.file).read_text(encoding="utf-8")
    tokens = preprocess(text, ckpt.max_len)
    with T.no_grad():
        trace = ckpt.model.forward(ckpt.vocab.lookup(tokens))
    probs = trace.probs.data
    out = []
    for j in top_k(probs, min(args.k, len(probs))):
        item = {"code": ckpt.codes.raw_codes[j], "prob": float(probs[j])}
        if args.attention:
            item["attention"] = [[tok, float(w)] for tok, w in zip(tokens, trace.A.data[j])]
        out.append(item)
    print(json.dumps({"tokens": len(tokens), "predictions": out}, indent=2 if args.attention else None))
    return 0


def cmd_gradcheck(args) -> int:
    seeds = _parse_seeds(args.seeds) if args.seeds else [args.seed]
    ok = True
    for seed in seeds:
        for rep in run_gradcheck(seed, perturb=args.perturb, tolerance=args.tolerance):
            for line in rep.lines():
                print(f"seed {seed} {line}")
            ok &= rep.passed
    print("gradcheck " + ("PASSED" if ok else "FAILED"))
    return 0 if ok else 2


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="laat", description="Label-attention multi-label text coding.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-corpus", help="generate a synthetic corpus with planted signals")
    g.add_argument("--spec", help="JSON synthetic spec (defaults when omitted)")
    g.add_argument("--out", required=True, help="directory for train/validation/test.jsonl")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_corpus)

    t = sub.add_parser("train", help="train one or more seeds")
    t.add_argument("--config", help="JSON run configuration")
    t.add_argument("--data", help="directory holding train/validation/test.jsonl")
    for s in SPLITS:
        t.add_argument(f"--{s}", help=f"{s} corpus (JSONL)")
    t.add_argument("--embeddings", help="pretrained vectors in text format")
    t.add_argument("--model", choices=("laat", "jointlaat"))
    t.add_argument("--encoder", choices=("bilstm", "bigru", "cnn"))
    t.add_argument("--attention", choices=("laat", "caml"))
    t.add_argument("--lr", type=float)
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--threshold", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--seeds", help="comma-separated seeds, e.g. 1,2,3")
    t.add_argument("--output", help=f"output directory (overrides config and ${OUTPUT_ENV})")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="score a checkpoint on a corpus")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--corpus", required=True)
    e.add_argument("--threshold", type=float, default=0.5)
    e.add_argument("--train-corpus", help="rebuild the vocabulary from this corpus and compare")
    e.add_argument("--name", help="row label in the printed table")
    e.add_argument("--output", help="write reports under <output>/reports")
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("predict", help="rank codes for one document")
    r.add_argument("--checkpoint", required=True)
    src = r.add_mutually_exclusive_group(required=True)
    src.add_argument("--text")
    src.add_argument("--file")
    r.add_argument("-k", type=int, default=5)
    r.add_argument("--attention", action="store_true", help="include per-token attention weights")
    r.set_defaults(func=cmd_predict)

    c = sub.add_parser("gradcheck", help="finite-difference check of every parameter group")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--seeds")
    c.add_argument("--tolerance", type=float, default=1e-4)
    c.add_argument("--perturb", help=argparse.SUPPRESS)
    c.set_defaults(func=cmd_gradcheck)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (*VALIDATION_ERRORS, ValueError) as exc:
        # remaining ValueErrors come from argument values handed to library code
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
