"""Command-line interface.

Every subcommand accepts ``--config PATH`` (JSON) and flags; flags win over
the file. The resolved configuration is echoed to ``<out>/config.json`` and
a ``summary.json`` is written next to the command's artifacts.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from . import __version__
from .data import (
    EmbeddingTable,
    LabelVocab,
    build_label_vocab,
    encode_documents,
    keep_labeled,
    load_corpus,
    load_embeddings,
    split_corpus,
    subsample_low_resource,
)
from .errors import ConfigError, MhanError
from .gradcheck import composite_grad_check
from .metrics import ThresholdPolicy
from .model import ModelConfig, export_doc_vectors
from .multitask import MultiTaskConfig, SharingScheme, build_mhan, count_params
from .sweep import low_resource_sweep
from .synth import SynthConfig, generate, write_synth
from .train import TrainConfig, evaluate_set, load_checkpoint, save_checkpoint, train

log = logging.getLogger("mhan")

COMMANDS = (
    "train",
    "evaluate",
    "predict",
    "count-params",
    "grad-check",
    "export-vectors",
    "synth-corpus",
    "low-resource-sweep",
)


@dataclass
class RunConfig:
    command: str = ""
    seed: int = 0
    out: str | None = None
    corpus: str | None = None
    embeddings: str | None = None
    checkpoint: str | None = None
    languages: list[str] | None = None
    split: str = "test"
    # model
    architecture: str = "HAN"
    encoder: str = "dense"
    sharing: str = "both"
    d: int = 40
    d_w: int = 100
    d_s: int = 100
    d_a: int = 100
    activation: str = "relu"
    strict_paper_scaling: bool = False
    constant_scaling: bool = False
    # labels / thresholds
    labels: str = "general"
    min_count: int | None = None
    threshold_mode: str = "full"
    threshold: float | None = None
    # training
    optimizer: str = "adam"
    lr: float = 1e-3
    batch_size: int = 16
    epoch_size: int = 25_000
    max_epochs: int = 100
    patience: int | None = 5
    clip_norm: float | None = None
    gammas: dict[str, float] | None = None
    fraction: float | None = None
    # count-params / synth-corpus
    langs: int = 2
    k: list[int] = field(default_factory=lambda: [300])
    m: int = 2
    docs: int = 200
    sigma: float = 0.1
    # low-resource sweep
    target: str | None = None
    aux: str | None = None
    tiers: list[str] | None = None
    fractions: list[float] | None = None
    seeds: list[int] | None = None
    nonaligned: bool = False

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if isinstance(d.get("k"), int):
            d["k"] = [d["k"]]
        return cls(**d)

    def model_config(self, k: int) -> ModelConfig:
        return ModelConfig(
            k=k, architecture=self.architecture, encoder=self.encoder, d=self.d, d_w=self.d_w,
            d_s=self.d_s, d_a=self.d_a, activation=self.activation,
            strict_paper_scaling=self.strict_paper_scaling, constant_scaling=self.constant_scaling,
        ).validate()

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            optimizer=self.optimizer, lr=self.lr, batch_size=self.batch_size,
            epoch_size=self.epoch_size, max_epochs=self.max_epochs, patience=self.patience,
            seed=self.seed, clip_norm=self.clip_norm,
        ).validate()

    def policy(self) -> ThresholdPolicy:
        return ThresholdPolicy.parse(self.threshold_mode, self.threshold)

    def out_dir(self) -> Path:
        path = Path(self.out or f"runs/{self.command}")
        path.mkdir(parents=True, exist_ok=True)
        return path


def _csv(cast):
    def parse(text):
        return [cast(v) for v in text.split(",") if v != ""]
    return parse


def _bool(text: str) -> bool:
    if text.lower() in ("1", "true", "yes"):
        return True
    if text.lower() in ("0", "false", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mhan", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"mhan {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    a = common.add_argument
    S = argparse.SUPPRESS
    a("--config", default=None, help="JSON file with RunConfig keys")
    a("--seed", type=int, default=S)
    a("--out", default=S, help="output directory")
    a("--corpus", default=S)
    a("--embeddings", default=S, help="word2vec file, or lang=path pairs separated by commas")
    a("--checkpoint", default=S)
    a("--languages", type=_csv(str), default=S)
    a("--split", choices=("train", "valid", "test"), default=S)
    a("--architecture", choices=("NN", "HNN", "HAN"), default=S)
    a("--encoder", choices=("dense", "gru", "bigru"), default=S)
    a("--sharing", choices=("mono", "enc", "att", "both"), default=S)
    a("--d", type=int, default=S)
    a("--d-w", dest="d_w", type=int, default=S)
    a("--d-s", dest="d_s", type=int, default=S)
    a("--d-a", dest="d_a", type=int, default=S)
    a("--activation", choices=("relu", "tanh", "sigmoid"), default=S)
    a("--strict-paper-scaling", dest="strict_paper_scaling", type=_bool, default=S)
    a("--constant-scaling", dest="constant_scaling", type=_bool, default=S)
    a("--labels", choices=("general", "specific"), default=S)
    a("--min-count", dest="min_count", type=int, default=S)
    a("--threshold-mode", dest="threshold_mode", choices=("full", "low"), default=S)
    a("--threshold", type=float, default=S)
    a("--optimizer", choices=("adam", "sgd"), default=S)
    a("--lr", type=float, default=S)
    a("--batch-size", dest="batch_size", type=int, default=S)
    a("--epoch-size", dest="epoch_size", type=int, default=S)
    a("--max-epochs", dest="max_epochs", type=int, default=S)
    a("--patience", type=int, default=S)
    a("--clip-norm", dest="clip_norm", type=float, default=S)
    a("--fraction", type=float, default=S)
    a("--langs", type=int, default=S, help="number of languages for count-params")
    a("--k", type=_csv(int), default=S, help="label counts, one per language")
    a("--m", type=int, default=S, help="languages in a synthetic corpus")
    a("--docs", type=int, default=S, help="documents per language in a synthetic corpus")
    a("--sigma", type=float, default=S)
    a("--target", default=S)
    a("--aux", default=S)
    a("--tiers", type=_csv(str), default=S)
    a("--fractions", type=_csv(float), default=S)
    a("--seeds", type=_csv(int), default=S)
    a("--nonaligned", type=_bool, default=S)
    a("-v", "--verbose", action="store_true")

    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def resolve_config(ns: argparse.Namespace) -> RunConfig:
    values: dict = {}
    if ns.config:
        try:
            values.update(json.loads(Path(ns.config).read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{ns.config}: invalid JSON ({exc.msg})") from exc
    flags = {k: v for k, v in vars(ns).items() if k not in ("config", "verbose")}
    values.update(flags)
    return RunConfig.from_dict(values)


# ---------------------------------------------------------------- helpers


def _load_embeddings(cfg: RunConfig) -> EmbeddingTable:
    if not cfg.embeddings:
        raise ConfigError("--embeddings is required")
    aligned = not cfg.nonaligned
    if "=" not in cfg.embeddings:
        return load_embeddings(cfg.embeddings, cfg.d, aligned=aligned)
    table = None
    for pair in cfg.embeddings.split(","):
        lang, _, path = pair.partition("=")
        table = load_embeddings(path, cfg.d, lang=lang, aligned=aligned, table=table)
    return table


def _load_docs(cfg: RunConfig):
    if not cfg.corpus:
        raise ConfigError("--corpus is required")
    docs, report = load_corpus(cfg.corpus, languages=cfg.languages)
    if cfg.languages:
        missing = [lang for lang in cfg.languages if lang not in docs]
        if missing:
            raise ConfigError(f"no documents for languages {missing}")
        docs = {lang: docs[lang] for lang in cfg.languages}
    else:
        docs = {lang: docs[lang] for lang in sorted(docs)}
    if report.rejected:
        log.warning("%d records rejected while loading %s", len(report.rejected), cfg.corpus)
    return docs, report


def _prepare(cfg: RunConfig, emb: EmbeddingTable, vocabs: dict[str, LabelVocab] | None = None):
    """Split the corpus and encode every split against the label vocabularies."""
    docs, report = _load_docs(cfg)
    splits = split_corpus(docs, cfg.seed)
    if vocabs is None:
        vocabs = build_label_vocab({lang: s.train for lang, s in splits.items()},
                                   cfg.labels, cfg.min_count)
    encoded = {}
    for part in ("train", "valid", "test"):
        encoded[part] = {}
        for lang, s in splits.items():
            part_docs = keep_labeled(getattr(s, part), vocabs[lang])
            if part == "train" and cfg.fraction is not None:
                part_docs = subsample_low_resource(part_docs, cfg.fraction, cfg.seed)
            encoded[part][lang] = encode_documents(part_docs, emb, vocabs[lang])
    return encoded, vocabs, report


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _summary(out: Path, cfg: RunConfig, start: float, f1=None, counts=None, **extra) -> dict:
    payload = {
        "command": cfg.command,
        "f1": f1,
        "params_total": None if counts is None else counts.total,
        "params_per_lang": None if counts is None else counts.per_language,
        "wall_seconds": round(time.perf_counter() - start, 3),
        **extra,
    }
    _write_json(out / "summary.json", payload)
    return payload


def _registry_from_checkpoint(cfg: RunConfig):
    if not cfg.checkpoint:
        raise ConfigError("--checkpoint is required")
    registry, meta = load_checkpoint(cfg.checkpoint)
    vocabs = {lang: LabelVocab(lang, tuple(labels), meta.get("labels", "general"))
              for lang, labels in meta["label_vocabs"].items()}
    return registry, meta, vocabs


# ---------------------------------------------------------------- commands


def cmd_train(cfg: RunConfig, out: Path, start: float) -> int:
    emb = _load_embeddings(cfg)
    enc, vocabs, _ = _prepare(cfg, emb)
    langs = tuple(enc["train"])
    configs = {lang: cfg.model_config(len(vocabs[lang])) for lang in langs}
    scheme = SharingScheme.parse(cfg.sharing) if len(langs) > 1 else SharingScheme.MONO
    registry = build_mhan(configs, scheme, cfg.seed)
    mt = MultiTaskConfig(langs, cfg.epoch_size, cfg.batch_size, cfg.gammas)
    policy = cfg.policy()
    result = train(registry, enc["train"], enc["valid"], emb, cfg.train_config(), mt, policy,
                   log_path=out / "train_log.jsonl")
    meta = {
        "run": {k: v for k, v in asdict(cfg).items() if k != "out"},
        "labels": cfg.labels,
        "label_vocabs": {lang: list(v.labels) for lang, v in vocabs.items()},
        "best_epoch": result.best_epoch,
    }
    save_checkpoint(out / "checkpoint.json", registry, meta)
    reports = {lang: evaluate_set(registry[lang], enc["test"][lang], emb, policy).report.as_dict()
               for lang in langs}
    _write_json(out / "metrics.json", reports)
    f1 = sum(r["f1"] for r in reports.values()) / len(reports)
    _summary(out, cfg, start, f1, count_params(registry), per_lang_f1={k: v["f1"] for k, v in reports.items()},
             best_epoch=result.best_epoch, epochs_run=result.epochs_run)
    print(f"trained {'+'.join(langs)} ({scheme.value}); best epoch {result.best_epoch}; test micro-F1 {f1:.4f}")
    return 0


def cmd_evaluate(cfg: RunConfig, out: Path, start: float) -> int:
    registry, meta, vocabs = _registry_from_checkpoint(cfg)
    emb = _load_embeddings(cfg)
    cfg = replace(cfg, languages=list(registry.languages))
    enc, _, _ = _prepare(cfg, emb, vocabs)
    policy = cfg.policy()
    reports = {lang: evaluate_set(registry[lang], enc[cfg.split][lang], emb, policy).report.as_dict()
               for lang in registry.languages}
    _write_json(out / "metrics.json", reports)
    f1 = sum(r["f1"] for r in reports.values()) / len(reports)
    _summary(out, cfg, start, f1, count_params(registry), split=cfg.split,
             per_lang_f1={k: v["f1"] for k, v in reports.items()})
    for lang, r in reports.items():
        print(f"{lang}\tP={r['precision']:.4f}\tR={r['recall']:.4f}\tF1={r['f1']:.4f}")
    return 0


def cmd_predict(cfg: RunConfig, out: Path, start: float) -> int:
    registry, meta, vocabs = _registry_from_checkpoint(cfg)
    emb = _load_embeddings(cfg)
    cfg = replace(cfg, languages=list(registry.languages))
    enc, _, _ = _prepare(cfg, emb, vocabs)
    policy = cfg.policy()
    lines = ["id\tlang\tpredicted"]
    for lang in registry.languages:
        s = enc[cfg.split][lang]
        ev = evaluate_set(registry[lang], s, emb, policy)
        for doc_id, pred in zip(s.doc_ids, ev.predictions):
            labels = ",".join(vocabs[lang].labels[j] for j in sorted(pred))
            lines.append(f"{doc_id}\t{lang}\t{labels}")
    (out / "predictions.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    _summary(out, cfg, start, None, count_params(registry), split=cfg.split, documents=len(lines) - 1)
    print(f"wrote {len(lines) - 1} predictions to {out / 'predictions.tsv'}")
    return 0


def cmd_count_params(cfg: RunConfig, out: Path, start: float) -> int:
    ks = cfg.k if len(cfg.k) > 1 else cfg.k * cfg.langs
    if len(ks) != cfg.langs:
        raise ConfigError(f"--k lists {len(ks)} values for {cfg.langs} languages")
    langs = [f"l{i + 1}" for i in range(cfg.langs)]
    registry = build_mhan({lang: cfg.model_config(k) for lang, k in zip(langs, ks)},
                          cfg.sharing, cfg.seed)
    counts = count_params(registry)
    _summary(out, cfg, start, None, counts, shared=counts.shared,
             average_per_language=counts.average_per_language,
             shares_attention_bias=counts.shares_attention_bias)
    print(f"sharing={cfg.sharing} encoder={cfg.encoder} M={cfg.langs} k={ks}")
    print(f"total {counts.total:,}")
    print(f"shared {counts.shared:,} (attention biases shared with their weights)")
    print(f"average per language {counts.average_per_language:,.1f}")
    return 0


def cmd_grad_check(cfg: RunConfig, out: Path, start: float) -> int:
    seeds = cfg.seeds or list(range(10))
    err = float(composite_grad_check(cfg.encoder, seeds))
    ok = bool(err < 1e-4)
    _summary(out, cfg, start, None, None, encoder=cfg.encoder, max_relative_error=err, passed=ok)
    print(f"grad-check {cfg.encoder}: max relative error {err:.3e} ({'ok' if ok else 'FAIL'})")
    return 0 if ok else 1


def cmd_export_vectors(cfg: RunConfig, out: Path, start: float) -> int:
    registry, meta, vocabs = _registry_from_checkpoint(cfg)
    emb = _load_embeddings(cfg)
    cfg = replace(cfg, languages=list(registry.languages))
    enc, _, _ = _prepare(cfg, emb, vocabs)
    docs = [d for lang in registry.languages for d in enc[cfg.split][lang].docs]
    n = export_doc_vectors(docs, registry.views, emb, out / "vectors.tsv")
    _summary(out, cfg, start, None, count_params(registry), split=cfg.split, documents=n)
    print(f"wrote {n} document vectors to {out / 'vectors.tsv'}")
    return 0


def cmd_synth_corpus(cfg: RunConfig, out: Path, start: float) -> int:
    synth = generate(SynthConfig(M=cfg.m, docs_per_lang=cfg.docs, k=cfg.k[0], d=cfg.d,
                                 sigma=cfg.sigma, seed=cfg.seed))
    paths = write_synth(synth, out)
    _summary(out, cfg, start, None, None, files={k: str(v) for k, v in paths.items()})
    print(f"wrote {cfg.m}x{cfg.docs} documents to {paths['corpus']}")
    return 0


def cmd_low_resource_sweep(cfg: RunConfig, out: Path, start: float) -> int:
    if not cfg.target or not cfg.aux:
        raise ConfigError("--target and --aux are required")
    emb = _load_embeddings(cfg)
    docs, _ = _load_docs(replace(cfg, languages=[cfg.target, cfg.aux]))
    tiers = cfg.tiers if not cfg.fractions and not cfg.fraction else None
    fractions = cfg.fractions or ([cfg.fraction] if cfg.fraction else None)
    result = low_resource_sweep(
        docs, emb, cfg.target, cfg.aux, cfg.model_config(1), cfg.train_config(),
        seeds=cfg.seeds or [cfg.seed], tiers=tiers or (None if fractions else ["tiny", "small", "medium"]),
        fractions=fractions, policy=ThresholdPolicy.parse("low", cfg.threshold),
    )
    payload = result.as_dict()
    _write_json(out / "sweep.json", payload)
    table = payload["table"]
    best = {g: table[g]["ensemble"]["mean"] for g in table}
    _summary(out, cfg, start, best, None, table=table)
    for group, models in table.items():
        cells = "  ".join(f"{m}={v['mean']:.4f}" for m, v in models.items())
        print(f"{group}: {cells}")
    return 0


HANDLERS = {
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
    "count-params": cmd_count_params,
    "grad-check": cmd_grad_check,
    "export-vectors": cmd_export_vectors,
    "synth-corpus": cmd_synth_corpus,
    "low-resource-sweep": cmd_low_resource_sweep,
}


def run_cli(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    start = time.perf_counter()
    try:
        cfg = resolve_config(ns)
        out = cfg.out_dir()
        _write_json(out / "config.json", asdict(cfg))
        return HANDLERS[cfg.command](cfg, out, start)
    except (MhanError, OSError, KeyError) as exc:
        print(f"mhan {ns.command}: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
