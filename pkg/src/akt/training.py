"""Training loop, early stopping on validation AUC, and k-fold runs."""

import itertools
import json
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .data import expand_multi_concept, kfold_split, make_batches, \
    select_learners, truncate
from .errors import ConfigError, DivergenceError, NumericsError
from .evaluation import predict_dataset
from .model import AktConfig, build
from .optim import Adam
from .tensor import binary_cross_entropy

# Hyperparameter lists from the original experimental protocol.
PAPER_GRID = {
    "learning_rate": (5e-6, 1e-5, 1e-4),
    "dropout": (0.0, 0.05, 0.10, 0.15, 0.20, 0.25),
    "max_grad_norm": (1.0, 10.0, float("inf")),
    "dim": (256, 512),
}

GRID_PRESETS = {"paper-grid": PAPER_GRID}


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    max_epochs: int = 300
    batch_size: int = 24
    max_grad_norm: float = 10.0
    patience: int = 10
    k: int = 5
    seed: int = 0
    fold: int = 0

    def validate(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.max_grad_norm <= 0:
            raise ConfigError("max_grad_norm must be positive (inf allowed)")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.k < 2:
            raise ConfigError("k must be >= 2")
        if not 0 <= self.fold < self.k:
            raise ConfigError(f"fold must lie in [0, {self.k})")


@dataclass
class RunRecord:
    """Everything measured during one fold's training run.

    Losses are logged both as the summed objective and per interaction;
    the optimizer steps on the per-interaction value. The test AUC is
    computed exactly once, on the checkpoint chosen by early stopping.
    """

    fold: int = 0
    train_loss_sums: list = field(default_factory=list)
    train_loss_means: list = field(default_factory=list)
    val_aucs: list = field(default_factory=list)
    best_epoch: int = 0
    test_auc: float = float("nan")
    wall_time: float = 0.0
    model_config: dict = field(default_factory=dict)
    train_config: dict = field(default_factory=dict)

    @property
    def epochs_run(self):
        return len(self.val_aucs)

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)


class EarlyStopper:
    """Stop after `patience` consecutive epochs without a new best score."""

    def __init__(self, patience):
        if patience < 1:
            raise ConfigError("patience must be >= 1")
        self.patience = patience
        self.best_score = -np.inf
        self.best_epoch = 0
        self.stale = 0

    def update(self, epoch, score):
        """Record an epoch's score; returns True when it is a new best."""
        if score > self.best_score:
            self.best_score = score
            self.best_epoch = epoch
            self.stale = 0
            return True
        self.stale += 1
        return False

    @property
    def should_stop(self):
        return self.stale >= self.patience


def prepare_fold(corpus, split, model_config, train_config):
    """Fold data pipeline: select learners, expand tags, truncate, batch.

    Returns (train_sequences, val_batches, test_batches); training
    sequences stay unbatched so every epoch can reshuffle them.
    """
    mode = model_config.multi_concept

    def pipeline(learner_ids):
        seqs = select_learners(corpus.sequences, learner_ids)
        seqs = expand_multi_concept(seqs, mode)
        return truncate(seqs, model_config.max_len)

    train_sequences = pipeline(split.train)
    if not train_sequences:
        raise ConfigError(
            f"fold {train_config.fold} has no training learners; with "
            f"k = {train_config.k} the test and validation chunks consume "
            f"every learner, so k must be at least 3")
    val_batches = make_batches(pipeline(split.val), train_config.batch_size,
                               multi_concept=mode)
    test_batches = make_batches(pipeline(split.test), train_config.batch_size,
                                multi_concept=mode)
    return train_sequences, val_batches, test_batches


def train_fold(model, train_sequences, val_batches, test_batches, config,
               log=None):
    """Train one model on one fold; returns the completed RunRecord."""
    config.validate()
    start = time.perf_counter()
    record = RunRecord(fold=config.fold,
                       model_config=asdict(model.config),
                       train_config=asdict(config))
    params = model.parameters()
    optimizer = Adam(params, lr=config.learning_rate,
                     max_grad_norm=config.max_grad_norm)
    shuffle_seed, dropout_seed = np.random.SeedSequence(config.seed).spawn(2)
    shuffle_rng = np.random.default_rng(shuffle_seed)
    dropout_rng = np.random.default_rng(dropout_seed)
    stopper = EarlyStopper(config.patience)
    best_snapshot = None

    for epoch in range(1, config.max_epochs + 1):
        batches = make_batches(train_sequences, config.batch_size,
                               rng=shuffle_rng,
                               multi_concept=model.config.multi_concept)
        epoch_sum = 0.0
        epoch_count = 0
        for batch in batches:
            preds, _ = model.forward(batch, training=True, rng=dropout_rng)
            loss = binary_cross_entropy(preds, batch.responses, batch.valid)
            if not np.isfinite(loss.data):
                raise DivergenceError(
                    f"epoch {epoch}: training loss is non-finite",
                    record=record)
            count = batch.interaction_count
            optimizer.zero_grad()
            (loss * (1.0 / count)).backward()
            try:
                optimizer.step()
            except NumericsError as err:
                raise DivergenceError(f"epoch {epoch}: {err}",
                                      record=record) from err
            epoch_sum += float(loss.data)
            epoch_count += count
        record.train_loss_sums.append(epoch_sum)
        record.train_loss_means.append(epoch_sum / epoch_count)
        val_auc = predict_dataset(model, val_batches).auc()
        record.val_aucs.append(val_auc)
        if stopper.update(epoch, val_auc):
            best_snapshot = {name: p.data.copy() for name, p in params.items()}
        if log is not None:
            log(f"fold {config.fold} epoch {epoch}: "
                f"loss/interaction {record.train_loss_means[-1]:.4f} "
                f"val AUC {val_auc:.4f}")
        if stopper.should_stop:
            break

    for name, p in params.items():
        p.data = best_snapshot[name]
    record.best_epoch = stopper.best_epoch
    record.test_auc = predict_dataset(model, test_batches).auc()
    record.wall_time = time.perf_counter() - start
    return record


def cross_validate(corpus, model_config, train_config, log=None,
                   on_fold=None):
    """Run every fold; returns (records, mean test AUC, population std)."""
    model_config.validate(corpus.meta)
    train_config.validate()
    folds = kfold_split(corpus.sequences, k=train_config.k,
                        seed=train_config.seed)
    records = []
    for i, split in enumerate(folds):
        fold_config = replace(train_config, fold=i)
        model = build(model_config, corpus.meta, seed=train_config.seed + i)
        train_sequences, val_batches, test_batches = prepare_fold(
            corpus, split, model_config, fold_config)
        record = train_fold(model, train_sequences, val_batches,
                            test_batches, fold_config, log=log)
        records.append(record)
        if on_fold is not None:
            on_fold(i, model, record)
    aucs = [r.test_auc for r in records]
    return records, float(np.mean(aucs)), float(np.std(aucs))


def run_single_fold(corpus, model_config, train_config, log=None):
    """Train the one fold named by train_config.fold.

    Returns (model, RunRecord); the fold split comes from the same seeded
    partition cross_validate uses, so fold i here matches fold i there.
    """
    model_config.validate(corpus.meta)
    train_config.validate()
    splits = kfold_split(corpus.sequences, k=train_config.k,
                         seed=train_config.seed)
    split = splits[train_config.fold]
    model = build(model_config, corpus.meta,
                  seed=train_config.seed + train_config.fold)
    train_sequences, val_batches, test_batches = prepare_fold(
        corpus, split, model_config, train_config)
    record = train_fold(model, train_sequences, val_batches, test_batches,
                        train_config, log=log)
    return model, record


# ---- hyperparameter grids ---------------------------------------------------


_MODEL_FIELDS = {f.name for f in fields(AktConfig)}
_TRAIN_FIELDS = {f.name for f in fields(TrainConfig)}


def expand_grid(grid):
    """Cartesian product of a {name: values} grid as override dicts."""
    names = sorted(grid)
    combos = []
    for values in itertools.product(*(grid[n] for n in names)):
        combos.append(dict(zip(names, values)))
    return combos


def apply_overrides(model_config, train_config, overrides):
    """Route override keys to whichever config dataclass owns them."""
    model_part = {k: v for k, v in overrides.items() if k in _MODEL_FIELDS}
    train_part = {k: v for k, v in overrides.items() if k in _TRAIN_FIELDS}
    unknown = set(overrides) - set(model_part) - set(train_part)
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    return replace(model_config, **model_part), \
        replace(train_config, **train_part)


def grid_search(corpus, model_config, train_config, grid, log=None):
    """Train one fold per grid point; select on best validation AUC.

    Returns (best_overrides, [(overrides, RunRecord), ...]).
    """
    results = []
    best = None
    for overrides in expand_grid(grid):
        m_cfg, t_cfg = apply_overrides(model_config, train_config, overrides)
        _, record = run_single_fold(corpus, m_cfg, t_cfg, log=log)
        score = max(record.val_aucs)
        results.append((overrides, record))
        if best is None or score > best[0]:
            best = (score, overrides)
        if log is not None:
            log(f"grid point {overrides}: best val AUC {score:.4f}")
    return best[1], results
