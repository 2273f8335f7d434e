"""Command-line interface.

Exit codes: 0 success, 1 usage or configuration problem, 2 data problem,
3 numerical failure. Every command that writes artifacts drops a
manifest.json beside them recording the resolved configuration, the seed
and a content hash of the input data, so a rerun can be checked for
equivalence.
"""

import dataclasses
import hashlib
import json
import sys
from pathlib import Path

import click
import numpy as np

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from . import __version__
from .attention import DistanceCache
from .data import Batch, DatasetMeta, expand_multi_concept, make_batches, \
    parse_csv, select_learners, truncate, write_csv
from .errors import ConfigError, DataError, NumericsError
from .evaluation import format_ablation_table, write_ablation_csv
from .model import AktConfig, AktModel, build
from .synthetic import SimSpec, bayes_optimal_auc, generate
from .tensor import binary_cross_entropy, grad_check, no_grad
from .training import GRID_PRESETS, TrainConfig, cross_validate, grid_search, \
    run_single_fold


def fingerprint(path):
    """Hex sha256 of a file's bytes."""
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(outdir, command, seed, config, dataset_sha256, artifacts):
    manifest = {
        "command": command,
        "version": __version__,
        "seed": seed,
        "config": config,
        "dataset_sha256": dataset_sha256,
        "artifacts": artifacts,
    }
    path = Path(outdir) / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True),
                    encoding="utf-8")
    return path


def load_config_file(path):
    if path is None:
        return {}
    raw = Path(path).read_bytes()
    if str(path).endswith(".json"):
        payload = json.loads(raw.decode("utf-8"))
    else:
        payload = tomllib.loads(raw.decode("utf-8"))
    known = {"model", "training", "data", "synthetic"}
    unknown = set(payload) - known
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}; "
                          f"expected {sorted(known)}")
    return payload


def _parse_head_widths(value):
    if value is None or isinstance(value, tuple):
        return value
    if isinstance(value, (list,)):
        return tuple(int(v) for v in value)
    try:
        return tuple(int(part) for part in str(value).split(","))
    except ValueError:
        raise ConfigError(f"bad head widths {value!r}; "
                          f"expected e.g. 512,256") from None


def resolve_configs(config_path, model_overrides, train_overrides):
    """Defaults, then the config file, then explicit CLI flags."""
    payload = load_config_file(config_path)
    model_kwargs = dict(payload.get("model", {}))
    model_kwargs.update(
        {k: v for k, v in model_overrides.items() if v is not None})
    if "head_widths" in model_kwargs:
        model_kwargs["head_widths"] = _parse_head_widths(
            model_kwargs["head_widths"])
    train_kwargs = dict(payload.get("training", {}))
    train_kwargs.update(
        {k: v for k, v in train_overrides.items() if v is not None})
    try:
        model_config = AktConfig(**model_kwargs)
    except TypeError as err:
        raise ConfigError(f"bad model config: {err}") from None
    try:
        train_config = TrainConfig(**train_kwargs)
    except TypeError as err:
        raise ConfigError(f"bad training config: {err}") from None
    model_config.validate()
    train_config.validate()
    return model_config, train_config, payload.get("data", {})


def _config_snapshot(model_config, train_config):
    return {"model": dataclasses.asdict(model_config),
            "training": dataclasses.asdict(train_config)}


def _checkpoint_extras(corpus):
    return {
        "concept_ids": corpus.concept_ids,
        "question_ids": corpus.question_ids,
        "question_concepts": corpus.question_concepts,
    }


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(__version__, prog_name="akt")
def cli():
    """Attentive knowledge tracing: train, evaluate and inspect models."""


def _model_options(f):
    options = [
        click.option("--variant", default=None,
                     help="akt-r | akt-nr | akt-raw-r | akt-raw-nr | "
                          "akt-nr-pos | akt-nr-fixed"),
        click.option("--dim", type=int, default=None),
        click.option("--heads", type=int, default=None),
        click.option("--dropout", type=float, default=None),
        click.option("--encoder-depth", type=int, default=None),
        click.option("--retriever-depth", type=int, default=None),
        click.option("--head-widths", default=None,
                     help="two comma-separated hidden widths, e.g. 512,256"),
        click.option("--max-len", type=int, default=None),
        click.option("--multi-concept", default=None,
                     type=click.Choice(["repeat", "average"])),
        click.option("--response-variation", default=None,
                     type=click.Choice(["concept", "pair"])),
    ]
    for option in reversed(options):
        f = option(f)
    return f


def _train_options(f):
    options = [
        click.option("--lr", "learning_rate", type=float, default=None),
        click.option("--epochs", "max_epochs", type=int, default=None),
        click.option("--batch-size", type=int, default=None),
        click.option("--max-grad-norm", type=float, default=None,
                     help="global gradient-norm cap; 'inf' disables"),
        click.option("--patience", type=int, default=None),
        click.option("--k", type=int, default=None),
        click.option("--fold", type=int, default=None),
        click.option("--seed", type=int, default=None),
    ]
    for option in reversed(options):
        f = option(f)
    return f


def _common_io(f):
    options = [
        click.option("--profile", default="none", show_default=True,
                     help="dataset filter profile"),
        click.option("--config", "config_path", default=None,
                     help="TOML or JSON run configuration"),
        click.option("--out", "-o", "outdir", required=True,
                     type=click.Path(file_okay=False)),
        click.option("--verbose", "-v", is_flag=True, default=False),
    ]
    for option in reversed(options):
        f = option(f)
    return f


def _collect(kwargs, names):
    return {name: kwargs.pop(name) for name in names}


_MODEL_KEYS = ("variant", "dim", "heads", "dropout", "encoder_depth",
               "retriever_depth", "head_widths", "max_len", "multi_concept",
               "response_variation")
_TRAIN_KEYS = ("learning_rate", "max_epochs", "batch_size", "max_grad_norm",
               "patience", "k", "fold", "seed")


@cli.command()
@click.argument("input_csv", type=click.Path(dir_okay=False))
@click.option("--profile", default="none", show_default=True)
@click.option("--out", "-o", "outdir", required=True,
              type=click.Path(file_okay=False))
def prepare(input_csv, profile, outdir):
    """Parse and filter a response log, report corpus statistics."""
    corpus = parse_csv(input_csv, profile=profile)
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(corpus.sequences, out / "data.csv")
    meta = dataclasses.asdict(corpus.meta)
    (out / "meta.json").write_text(json.dumps({
        "meta": meta,
        "profile": profile,
        "concept_ids": corpus.concept_ids,
        "question_ids": corpus.question_ids,
    }, indent=2, sort_keys=True), encoding="utf-8")
    write_manifest(out, "prepare", 0, {"profile": profile},
                   fingerprint(input_csv),
                   {"data": "data.csv", "meta": "meta.json"})
    click.echo(f"learners   {corpus.meta.num_learners}")
    click.echo(f"concepts   {corpus.meta.num_concepts}")
    click.echo(f"questions  {corpus.meta.num_questions}")
    click.echo(f"responses  {corpus.meta.num_responses}")


@cli.command()
@click.argument("data_csv", type=click.Path(dir_okay=False))
@_common_io
@_model_options
@_train_options
@click.option("--grid", "grid_name", default=None,
              type=click.Choice(sorted(GRID_PRESETS)),
              help="search this hyperparameter grid first")
def train(data_csv, profile, config_path, outdir, verbose, grid_name,
          **kwargs):
    """Train a single fold; writes checkpoint.npz and record.json."""
    model_overrides = _collect(kwargs, _MODEL_KEYS)
    train_overrides = _collect(kwargs, _TRAIN_KEYS)
    model_config, train_config, data_cfg = resolve_configs(
        config_path, model_overrides, train_overrides)
    corpus = parse_csv(data_csv, profile=data_cfg.get("profile", profile))
    log = click.echo if verbose else None
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    artifacts = {}

    if grid_name is not None:
        best, results = grid_search(corpus, model_config, train_config,
                                    GRID_PRESETS[grid_name], log=log)
        (out / "grid.json").write_text(json.dumps({
            "best": best,
            "results": [{"overrides": o,
                         "best_val_auc": max(r.val_aucs),
                         "test_auc": r.test_auc}
                        for o, r in results],
        }, indent=2, sort_keys=True), encoding="utf-8")
        artifacts["grid"] = "grid.json"
        from .training import apply_overrides
        model_config, train_config = apply_overrides(
            model_config, train_config, best)
        click.echo(f"grid best: {best}")

    model, record = run_single_fold(corpus, model_config, train_config,
                                    log=log)
    model.save(out / "checkpoint.npz", extras=_checkpoint_extras(corpus))
    (out / "record.json").write_text(record.to_json(), encoding="utf-8")
    artifacts.update({"checkpoint": "checkpoint.npz",
                      "record": "record.json"})
    write_manifest(out, "train", train_config.seed,
                   _config_snapshot(model_config, train_config),
                   fingerprint(data_csv), artifacts)
    click.echo(f"fold {train_config.fold}: test AUC {record.test_auc:.4f} "
               f"(best epoch {record.best_epoch}, "
               f"{record.epochs_run} epochs run)")


@cli.command()
@click.argument("data_csv", type=click.Path(dir_okay=False))
@_common_io
@_model_options
@_train_options
@click.option("--workers", type=int, default=1, show_default=True,
              help="folds trained in parallel processes")
def cv(data_csv, profile, config_path, outdir, verbose, workers, **kwargs):
    """Cross-validate over all k folds; writes per-fold checkpoints."""
    model_overrides = _collect(kwargs, _MODEL_KEYS)
    train_overrides = _collect(kwargs, _TRAIN_KEYS)
    model_config, train_config, data_cfg = resolve_configs(
        config_path, model_overrides, train_overrides)
    corpus = parse_csv(data_csv, profile=data_cfg.get("profile", profile))
    log = click.echo if verbose else None
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)

    records = [None] * train_config.k
    artifacts = {}

    def keep(fold, model, record):
        records[fold] = record
        name = f"fold-{fold}.npz"
        model.save(out / name, extras=_checkpoint_extras(corpus))
        artifacts[f"checkpoint_{fold}"] = name
        click.echo(f"fold {fold}: test AUC {record.test_auc:.4f} "
                   f"(best epoch {record.best_epoch})")

    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        jobs = [(corpus, model_config,
                 dataclasses.replace(train_config, fold=fold))
                for fold in range(train_config.k)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for fold, (model, record) in enumerate(
                    pool.map(_cv_worker, jobs)):
                keep(fold, model, record)
    else:
        cross_validate(corpus, model_config, train_config, log=log,
                       on_fold=keep)

    aucs = [r.test_auc for r in records]
    mean_auc, std_auc = float(np.mean(aucs)), float(np.std(aucs))
    (out / "records.json").write_text(json.dumps({
        "folds": [json.loads(r.to_json()) for r in records],
        "mean_test_auc": mean_auc,
        "std_test_auc": std_auc,
    }, indent=2, sort_keys=True), encoding="utf-8")
    artifacts["records"] = "records.json"
    write_manifest(out, "cv", train_config.seed,
                   _config_snapshot(model_config, train_config),
                   fingerprint(data_csv), artifacts)
    click.echo(f"test AUC over {train_config.k} folds: "
               f"{mean_auc:.4f} +- {std_auc:.4f}")


def _cv_worker(job):
    corpus, model_config, train_config = job
    return run_single_fold(corpus, model_config, train_config)


@cli.command()
@click.argument("data_csv", type=click.Path(dir_okay=False))
@_common_io
@_model_options
@_train_options
@click.option("--variants", default="akt-r,akt-nr", show_default=True,
              help="comma-separated variant names")
def ablate(data_csv, profile, config_path, outdir, verbose, variants,
           **kwargs):
    """Cross-validate several variants and tabulate the comparison."""
    from .evaluation import ablation_suite

    model_overrides = _collect(kwargs, _MODEL_KEYS)
    train_overrides = _collect(kwargs, _TRAIN_KEYS)
    model_config, train_config, data_cfg = resolve_configs(
        config_path, model_overrides, train_overrides)
    corpus = parse_csv(data_csv, profile=data_cfg.get("profile", profile))
    names = [v.strip() for v in variants.split(",") if v.strip()]
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    rows = ablation_suite(corpus, names, model_config, train_config)
    write_ablation_csv(rows, out / "ablation.csv")
    write_manifest(out, "ablate", train_config.seed,
                   {**_config_snapshot(model_config, train_config),
                    "variants": names},
                   fingerprint(data_csv), {"table": "ablation.csv"})
    click.echo(format_ablation_table(rows))


@cli.command()
@click.option("--spec", "spec_path", default=None,
              help="TOML/JSON file with a [synthetic] section")
@click.option("--learners", type=int, default=None)
@click.option("--concepts", type=int, default=None)
@click.option("--questions-per-concept", type=int, default=None)
@click.option("--difficulty-mean", type=float, default=None)
@click.option("--difficulty-spread", type=float, default=None)
@click.option("--ability-spread", type=float, default=None)
@click.option("--learn-rate", type=float, default=None)
@click.option("--forget-rate", type=float, default=None)
@click.option("--length", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", "-o", "outdir", required=True,
              type=click.Path(file_okay=False))
def synth(spec_path, outdir, **kwargs):
    """Generate a simulator corpus plus its ground-truth sidecar."""
    payload = load_config_file(spec_path).get("synthetic", {})
    renames = {"learners": "num_learners", "concepts": "num_concepts",
               "length": "sequence_length"}
    for flag, value in kwargs.items():
        if value is not None:
            payload[renames.get(flag, flag)] = value
    try:
        spec = SimSpec(**payload)
    except TypeError as err:
        raise ConfigError(f"bad simulator spec: {err}") from None
    sequences, truth = generate(spec)
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(sequences, out / "data.csv")
    truth.save(out / "truth.json")
    write_manifest(out, "synth", spec.seed, dataclasses.asdict(spec),
                   fingerprint(out / "data.csv"),
                   {"data": "data.csv", "truth": "truth.json"})
    reference = bayes_optimal_auc(truth, sequences)
    click.echo(f"learners   {spec.num_learners}")
    click.echo(f"concepts   {spec.num_concepts}")
    click.echo(f"questions  {spec.num_questions}")
    click.echo(f"responses  {spec.num_learners * spec.sequence_length}")
    click.echo(f"bayes-optimal AUC {reference:.4f}")


@cli.command("export-attention")
@click.argument("checkpoint", type=click.Path(dir_okay=False))
@click.option("--data", "data_csv", required=True,
              type=click.Path(dir_okay=False))
@click.option("--profile", default="none", show_default=True)
@click.option("--learner", required=True)
@click.option("--block", default="retriever.0", show_default=True)
@click.option("--out", "-o", "out_path", default="attention.json",
              show_default=True)
def export_attention(checkpoint, data_csv, profile, learner, block, out_path):
    """Dump one learner's attention weights and head decay rates as JSON."""
    model = AktModel.load(checkpoint)
    corpus = parse_csv(data_csv, profile=profile)
    chosen = select_learners(corpus.sequences, [learner])
    if not chosen:
        raise DataError(f"learner {learner!r} not present in {data_csv}")
    seqs = truncate(expand_multi_concept(chosen, model.config.multi_concept),
                    model.config.max_len)
    batch = make_batches(seqs[:1], batch_size=1,
                         multi_concept=model.config.multi_concept)[0]
    with no_grad():
        _, traces = model.forward(batch, collect_trace=True)
    if block not in traces:
        raise ConfigError(f"no attention block {block!r}; "
                          f"available: {sorted(traces)}")
    trace = traces[block]
    length = batch.length
    heads = []
    for h in range(trace.weights.shape[1]):
        heads.append({
            "head": h,
            "theta": None if trace.theta is None else float(trace.theta[h]),
            "rows": trace.weights[0, h, :length, :length].tolist(),
        })
    Path(out_path).write_text(json.dumps({
        "learner": learner, "block": block, "length": length,
        "heads": heads,
    }, indent=2), encoding="utf-8")
    click.echo(f"wrote {len(heads)} heads x {length} rows to {out_path}")


@cli.command("export-difficulty")
@click.argument("checkpoint", type=click.Path(dir_okay=False))
@click.option("--out", "-o", "out_path", default="difficulty.csv",
              show_default=True)
def export_difficulty(checkpoint, out_path):
    """Dump learned per-question difficulties with original IDs as CSV."""
    import csv as _csv

    model = AktModel.load(checkpoint)
    if not model.config.uses_rasch:
        raise ConfigError(
            f"checkpoint variant {model.config.variant} has no difficulty "
            f"table; only Rasch variants learn one")
    extras = getattr(model, "extras", {}) or {}
    question_ids = extras.get("question_ids", {})
    question_concepts = extras.get("question_concepts", {})
    concept_ids = extras.get("concept_ids", {})
    mu = model.embeddings.difficulty.data
    with open(out_path, "w", newline="", encoding="utf-8") as handle:
        writer = _csv.writer(handle)
        writer.writerow(["question_id", "concept_id", "mu"])
        for dense in range(1, model.meta.num_questions + 1):
            key = str(dense)
            concept_dense = question_concepts.get(key, 0)
            writer.writerow([
                question_ids.get(key, dense),
                concept_ids.get(str(concept_dense), concept_dense),
                repr(float(mu[dense - 1])),
            ])
    click.echo(f"wrote {model.meta.num_questions} questions to {out_path}")


@cli.command("grad-check")
@click.option("--dim", type=int, default=8, show_default=True)
@click.option("--heads", type=int, default=2, show_default=True)
@click.option("--batch", "batch_size", type=int, default=2, show_default=True)
@click.option("--length", type=int, default=8, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--tolerance", type=float, default=1e-4, show_default=True)
def grad_check_cmd(dim, heads, batch_size, length, seed, tolerance):
    """Compare tape gradients against finite differences on a tiny model."""
    rng = np.random.default_rng(seed)
    num_concepts, num_questions = 4, 6
    valid = np.ones((batch_size, length), dtype=bool)
    if length > 2:
        valid[0, -2:] = False
    batch = Batch(
        questions=rng.integers(1, num_questions + 1, (batch_size, length)),
        concepts=rng.integers(1, num_concepts + 1, (batch_size, length)),
        responses=rng.integers(0, 2, (batch_size, length)),
        valid=valid,
        learner_ids=[f"probe-{i}" for i in range(batch_size)],
        offsets=[0] * batch_size,
    )
    meta = DatasetMeta(num_concepts, num_questions, batch_size,
                       int(valid.sum()))
    config = AktConfig(variant="akt-r", dim=dim, heads=heads, dropout=0.0,
                       head_widths=(16, 8), max_len=length)
    model = build(config, meta, seed=seed)
    cache = DistanceCache()
    count = batch.interaction_count

    def loss():
        preds, _ = model.forward(batch, dist_cache=cache)
        return binary_cross_entropy(preds, batch.responses,
                                    batch.valid) * (1.0 / count)

    params = list(model.parameters().values())
    # A probe step of 1e-4 keeps the central-difference roundoff floor
    # (about loss * 1e-16 / epsilon) below the 1e-8 denominator guard.
    worst = grad_check(loss, params, epsilon=1e-4)
    total = sum(p.data.size for p in params)
    click.echo(f"max relative gradient error {worst:.3e} "
               f"over {total} parameters")
    if worst >= tolerance:
        raise NumericsError(f"gradient check failed: {worst:.3e} >= "
                            f"{tolerance:.1e}")
    click.echo("gradient check passed")


def main(argv=None):
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.ClickException as err:
        err.show()
        return 1
    except ConfigError as err:
        click.echo(f"config error: {err}", err=True)
        return 1
    except (DataError, OSError) as err:
        click.echo(f"data error: {err}", err=True)
        return 2
    except NumericsError as err:
        click.echo(f"numerical failure: {err}", err=True)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
