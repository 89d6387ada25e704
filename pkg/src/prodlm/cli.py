"""Command-line pipeline: catalog -> data -> train -> eval -> compare.

One TOML config file describes one experiment arm; the id-token ablation is
two configs differing only in `id_mode`. Every artifact a command writes
embeds the checksum of the config file that produced it, and downstream
commands refuse mismatched artifact pairs.

Exit codes: 0 ok, 1 report invariant violation, 2 usage error, 3 config
validation error, 4 artifact mismatch or corruption.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import catalog as cat
from . import checkpoint as ckpt
from . import datagen, evaluation, tokenizer
from .hashing import file_checksum, fnv1a64
from .model import InvalidConfig, ModelConfig, expand_embeddings, init_params
from .training import Hyperparams, InvalidHyperparameters, train_sft

EXIT_OK = 0
EXIT_REPORT_INVARIANT = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_ARTIFACT = 4

ID_NOISE_SCALE = 0.02


class ConfigError(ValueError):
    pass


class ArtifactMismatch(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    seed: int
    id_mode: bool
    n_products: int
    n_categories: int
    model: ModelConfig  # vocab_size here is a placeholder until data exists
    train: Hyperparams
    workdir: Path
    paths: dict[str, Path]
    config_checksum: int

    def path(self, name: str) -> Path:
        return self.paths[name]


_DEFAULT_FILES = {"catalog": "catalog.jsonl", "train_data": "train.jsonl",
                  "val_data": "val.jsonl", "test_data": "test.jsonl",
                  "checkpoint": "model.ckpt", "quant_report": "quant.json",
                  "qual_report": "qual.json", "details": "details.jsonl"}

_MODEL_KEYS = ("n_layers", "n_heads", "d_model", "d_ff", "context_len")
_TRAIN_KEYS = ("lr", "batch_size", "epochs", "beta1", "beta2", "eps",
               "weight_decay", "warmup_frac")


def _require(table: dict, key: str, kind, where: str):
    if key not in table:
        raise ConfigError(f"missing key {key!r} in {where}")
    value = table[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kind) or isinstance(value, bool) and kind is int:
        raise ConfigError(f"{where}.{key} must be {kind.__name__}")
    return value


def _reject_unknown(table: dict, allowed, where: str) -> None:
    unknown = set(table) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


def load_config(path: str | Path, seed_override: int | None = None,
                out_override: str | None = None) -> RunConfig:
    """Parse and validate a TOML run config. Raises ConfigError on any
    structural problem; the caller maps that to exit code 3."""
    path = Path(path)
    try:
        raw_bytes = path.read_bytes()
        data = tomllib.loads(raw_bytes.decode("utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as e:
        raise ConfigError(f"config is not valid TOML: {e}")

    _reject_unknown(data, ("seed", "id_mode", "catalog", "model", "train",
                           "paths"), "config")
    seed = _require(data, "seed", int, "config")
    if not (0 <= seed < 2 ** 64):
        raise ConfigError("seed must fit in 64 bits")
    if "id_mode" not in data or not isinstance(data["id_mode"], bool):
        raise ConfigError(
            "id_mode must be set explicitly to true or false; it is the "
            "experimental variable and has no default")
    id_mode = data["id_mode"]
    if seed_override is not None:
        seed = seed_override

    cat_tab = data.get("catalog", {})
    _reject_unknown(cat_tab, ("n_products", "n_categories"), "catalog")
    n_products = _require(cat_tab, "n_products", int, "catalog")
    n_categories = _require(cat_tab, "n_categories", int, "catalog")

    model_tab = dict(data.get("model", {}))
    _reject_unknown(model_tab, _MODEL_KEYS, "model")
    train_tab = dict(data.get("train", {}))
    _reject_unknown(train_tab, _TRAIN_KEYS, "train")
    try:
        model = ModelConfig(vocab_size=5, seed=seed, **model_tab)
        hp = Hyperparams(seed=seed, **train_tab)
        hp.validate()
        # catalog preconditions surface here, before any work runs
        if n_products < 1 or n_categories < 1:
            raise ConfigError("catalog sizes must be positive")
        if n_categories > n_products:
            raise ConfigError("more categories than products")
    except (InvalidConfig, InvalidHyperparameters, TypeError) as e:
        raise ConfigError(str(e))

    paths_tab = dict(data.get("paths", {}))
    _reject_unknown(paths_tab, ("workdir", *_DEFAULT_FILES), "paths")
    workdir = Path(out_override if out_override is not None
                   else paths_tab.get("workdir", "runs/default"))
    paths = {}
    for name, default in _DEFAULT_FILES.items():
        if out_override is None and name in paths_tab:
            paths[name] = Path(paths_tab[name])
        else:
            paths[name] = workdir / default
    for p in {q.parent for q in paths.values()}:
        try:
            p.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise ConfigError(f"output directory {p} not writable: {e}")

    return RunConfig(seed=seed, id_mode=id_mode, n_products=n_products,
                     n_categories=n_categories, model=model, train=hp,
                     workdir=workdir, paths=paths,
                     config_checksum=fnv1a64(raw_bytes))


def _load_paired_catalog(cfg: RunConfig):
    path = cfg.path("catalog")
    if not path.exists():
        raise ArtifactMismatch(f"catalog file missing: {path} (run gen-catalog)")
    return cat.load_catalog(path), file_checksum(path)


def _load_paired_dataset(cfg: RunConfig, catalog_checksum: int):
    paths = {"train": cfg.path("train_data"), "val": cfg.path("val_data"),
             "test": cfg.path("test_data")}
    for p in paths.values():
        if not p.exists():
            raise ArtifactMismatch(f"dataset file missing: {p} (run gen-data)")
    dataset, stamped = datagen.load_dataset(paths)
    if stamped != catalog_checksum:
        raise ArtifactMismatch(
            "dataset was generated from a different catalog file")
    return dataset


def _build_vocab(cfg: RunConfig, catalog, dataset):
    vocab = tokenizer.build_base_vocab(datagen.corpus_texts(dataset))
    if cfg.id_mode:
        vocab = tokenizer.expand_with_product_ids(vocab, catalog)
    return vocab


def _cmd_gen_catalog(cfg: RunConfig) -> int:
    catalog = cat.generate_catalog(cfg.seed, cfg.n_products, cfg.n_categories)
    out = cfg.path("catalog")
    cat.save_catalog(catalog, out,
                     extra_header={"config_checksum": cfg.config_checksum})
    print(f"catalog: {len(catalog)} products, {len(catalog.categories)} "
          f"categories -> {out}")
    print(f"catalog checksum: {file_checksum(out):016x}")
    return EXIT_OK


def _cmd_gen_data(cfg: RunConfig) -> int:
    catalog, checksum = _load_paired_catalog(cfg)
    dataset = datagen.build_dataset(catalog, cfg.seed)
    paths = {"train": cfg.path("train_data"), "val": cfg.path("val_data"),
             "test": cfg.path("test_data")}
    datagen.save_dataset(dataset, paths, checksum,
                         extra_header={"config_checksum": cfg.config_checksum})
    print(f"dataset: {len(dataset.train)} train / {len(dataset.val)} val / "
          f"{len(dataset.test)} test -> {paths['train'].parent}")
    return EXIT_OK


def _cmd_train(cfg: RunConfig) -> int:
    catalog, checksum = _load_paired_catalog(cfg)
    dataset = _load_paired_dataset(cfg, checksum)
    vocab = _build_vocab(cfg, catalog, dataset)
    base_size = vocab.base_size
    model_cfg = dataclasses.replace(cfg.model, vocab_size=base_size)
    params = init_params(model_cfg)
    if cfg.id_mode:
        params = expand_embeddings(params, len(vocab) - base_size,
                                   ID_NOISE_SCALE, cfg.seed)
    params, log = train_sft(params, params.config, dataset, vocab, cfg.train)
    out = cfg.path("checkpoint")
    meta = {"config_checksum": cfg.config_checksum,
            "catalog_checksum": checksum, "id_mode": cfg.id_mode,
            "seed": cfg.seed}
    stored = ckpt.save_checkpoint(out, params, vocab, meta)
    train_losses = log.losses("train")
    val_losses = log.losses("val")
    print(f"trained {len(train_losses)} steps; "
          f"final train loss {train_losses[-1]:.4f}"
          + (f", final val loss {val_losses[-1]:.4f}" if val_losses else ""))
    print(f"checkpoint -> {out} (checksum {stored:016x})")
    return EXIT_OK


def _load_paired_model(cfg: RunConfig, catalog, catalog_checksum, dataset):
    path = cfg.path("checkpoint")
    if not path.exists():
        raise ArtifactMismatch(f"checkpoint missing: {path} (run train)")
    params, vocab, meta = ckpt.load_checkpoint(path)
    if meta.get("catalog_checksum") != catalog_checksum:
        raise ArtifactMismatch(
            "checkpoint was trained against a different catalog file")
    rebuilt = _build_vocab(cfg, catalog, dataset)
    if rebuilt.tokens != vocab.tokens or rebuilt.id_mode != vocab.id_mode:
        raise ArtifactMismatch(
            "checkpoint vocabulary does not match this catalog + dataset")
    return params, vocab


def _cmd_eval(cfg: RunConfig) -> int:
    catalog, checksum = _load_paired_catalog(cfg)
    dataset = _load_paired_dataset(cfg, checksum)
    params, vocab = _load_paired_model(cfg, catalog, checksum, dataset)
    quant = evaluation.evaluate_quantitative(
        params, vocab, catalog, dataset.test, k=5, catalog_checksum=checksum)
    quant.validate()
    qual = evaluation.evaluate_qualitative(params, vocab, catalog,
                                           dataset.test)
    qual.validate()
    extra = {"config_checksum": cfg.config_checksum}
    evaluation.save_report(quant, cfg.path("quant_report"), extra=extra)
    evaluation.save_report(qual, cfg.path("qual_report"), extra=extra)
    evaluation.save_details_jsonl(quant, cfg.path("details"))
    arm = "with_id_tokens" if cfg.id_mode else "without_id_tokens"
    print(evaluation.render_quant_table(
        quant, title=f"quantitative ({arm})",
        reference=evaluation.FULL_SCALE_REFERENCE[arm]))
    print()
    print(evaluation.render_qual_table(
        qual, reference=evaluation.FULL_SCALE_REFERENCE["judge"]))
    print(f"\nreports -> {cfg.path('quant_report')}, "
          f"{cfg.path('qual_report')}")
    return EXIT_OK


def _cmd_compare(args) -> int:
    report_a = evaluation.load_report(args.report_a)
    report_b = evaluation.load_report(args.report_b)
    for r, p in ((report_a, args.report_a), (report_b, args.report_b)):
        if not isinstance(r, evaluation.QuantReport):
            raise ArtifactMismatch(f"{p} is not a quantitative report")
        r.validate()
    cmp = evaluation.compare_runs(report_a, report_b,
                                  label_a=args.label_a, label_b=args.label_b)
    print(evaluation.render_comparison(cmp))
    return EXIT_OK


def _answer_query(cfg, params, vocab, catalog, query: str, k: int) -> None:
    from .decoding import NoRecommendation, generate, recommend_topk
    try:
        recs = recommend_topk(params, params.config, vocab, catalog, query, k)
    except NoRecommendation:
        print("no recommendation: the model produced no product id")
        return
    for r in recs:
        flag = "  [unknown id]" if r.hallucinated else ""
        print(f"{r.rank}. {r.product_id}  score {r.sequence_logprob:.4f}{flag}")
    text, _ = generate(params, params.config, vocab,
                       datagen.wrap_query(query), max_new=96)
    print(f"response: {text}")


def _cmd_query(cfg: RunConfig, args) -> int:
    catalog, checksum = _load_paired_catalog(cfg)
    dataset = _load_paired_dataset(cfg, checksum)
    params, vocab = _load_paired_model(cfg, catalog, checksum, dataset)
    k = args.k
    if args.text is not None:
        _answer_query(cfg, params, vocab, catalog, args.text, k)
        return EXIT_OK
    # line REPL
    print(f"interactive mode; :k N sets k (now {k}), :quit exits")
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        if line == ":quit":
            break
        if line.startswith(":k"):
            try:
                k = int(line.split()[1])
                if k < 1:
                    raise ValueError
                print(f"k = {k}")
            except (IndexError, ValueError):
                print("usage: :k N  (N >= 1)")
            continue
        _answer_query(cfg, params, vocab, catalog, line, k)
    return EXIT_OK


def _cmd_report(args) -> int:
    for path in args.reports:
        report = evaluation.load_report(path)
        report.validate()
        if isinstance(report, evaluation.QuantReport):
            print(evaluation.render_quant_table(report, title=str(path)))
        else:
            print(evaluation.render_qual_table(report, title=str(path)))
        print()
    return EXIT_OK


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prodlm",
        description="product-knowledge LM pipeline: generate a synthetic "
                    "catalog and query dataset, fine-tune a small LM with "
                    "product-id tokens, and evaluate recommendations")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", required=True, help="TOML run config")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--out", default=None,
                       help="override the working directory for artifacts")
        return p

    with_config(sub.add_parser("gen-catalog", help="generate the catalog"))
    with_config(sub.add_parser("gen-data", help="generate query/response data"))
    with_config(sub.add_parser("train", help="fine-tune the model"))
    with_config(sub.add_parser("eval", help="run both evaluations"))

    p = sub.add_parser("compare", help="diff two quantitative reports")
    p.add_argument("report_a")
    p.add_argument("report_b")
    p.add_argument("--label-a", default="run A")
    p.add_argument("--label-b", default="run B")

    p = with_config(sub.add_parser("query",
                                   help="ask for recommendations (REPL "
                                        "when no query is given)"))
    p.add_argument("text", nargs="?", default=None)
    p.add_argument("-k", type=int, default=5)

    p = sub.add_parser("report", help="validate and render report files")
    p.add_argument("reports", nargs="+")
    return parser


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else EXIT_USAGE
    try:
        if args.command == "compare":
            return _cmd_compare(args)
        if args.command == "report":
            return _cmd_report(args)
        cfg = load_config(args.config, seed_override=args.seed,
                          out_override=args.out)
        if args.command == "gen-catalog":
            return _cmd_gen_catalog(cfg)
        if args.command == "gen-data":
            return _cmd_gen_data(cfg)
        if args.command == "train":
            return _cmd_train(cfg)
        if args.command == "eval":
            return _cmd_eval(cfg)
        if args.command == "query":
            return _cmd_query(cfg, args)
        return EXIT_USAGE
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except evaluation.ReportInvariantViolation as e:
        print(f"report invariant violation: {e}", file=sys.stderr)
        return EXIT_REPORT_INVARIANT
    except (ArtifactMismatch, evaluation.CatalogMismatch,
            evaluation.IncomparableRuns, evaluation.ReportFormatError,
            ckpt.CheckpointError, cat.CatalogFormatError,
            datagen.DatasetFormatError, tokenizer.VocabFormatError,
            cat.InvalidArguments) as e:
        print(f"artifact error: {e}", file=sys.stderr)
        return EXIT_ARTIFACT


def run(argv=None) -> int:
    """Alias kept for callers that prefer a verb."""
    return main(argv)


if __name__ == "__main__":
    sys.exit(main())
