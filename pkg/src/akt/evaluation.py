"""Metrics and comparison runners.

AUC is the probability that a uniformly random positive outranks a
uniformly random negative, ties counted half. The implementation sums
tie-averaged ranks (Mann-Whitney U); ranks and pair counts are exact
dyadic rationals in float64, so the result matches a brute-force pairwise
count bitwise, not just approximately.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, MetricError
from .tensor import no_grad


@dataclass
class PredictionSet:
    """Pooled per-position predictions for one evaluation split."""

    learner_ids: list
    positions: np.ndarray
    question_ids: np.ndarray
    concept_ids: np.ndarray
    labels: np.ndarray
    probabilities: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.int64)
        self.question_ids = np.asarray(self.question_ids, dtype=np.int64)
        self.concept_ids = np.asarray(self.concept_ids, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.probabilities = np.asarray(self.probabilities, dtype=np.float64)
        if not np.isin(self.labels, (0, 1)).all():
            raise DataError("prediction labels must be 0 or 1")
        if ((self.probabilities < 0) | (self.probabilities > 1)).any():
            raise DataError("predicted probabilities must lie in [0, 1]")

    def __len__(self):
        return len(self.labels)

    def auc(self):
        return auc(self.labels, self.probabilities)

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["learner_id", "position", "question_id",
                             "concept_id", "label", "prob"])
            for i in range(len(self)):
                writer.writerow([
                    self.learner_ids[i], self.positions[i],
                    self.question_ids[i], self.concept_ids[i],
                    self.labels[i], repr(float(self.probabilities[i])),
                ])


def _tied_ranks(values):
    """1-based ranks with ties replaced by their group average."""
    _, inverse, counts = np.unique(values, return_inverse=True,
                                   return_counts=True)
    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
    return (starts + (counts + 1) / 2.0)[inverse]


def auc(labels, scores):
    """Area under the ROC curve of binary labels against scores."""
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    if labels.shape != scores.shape or labels.ndim != 1:
        raise DataError("auc expects matching 1-D labels and scores")
    positives = int((labels == 1).sum())
    negatives = int((labels == 0).sum())
    if positives == 0 or negatives == 0:
        raise MetricError("AUC is undefined when only one class is present")
    ranks = _tied_ranks(scores)
    u = ranks[labels == 1].sum() - positives * (positives + 1) / 2.0
    return u / (positives * negatives)


def predict_dataset(model, batches):
    """Run the model over evaluation batches and pool valid positions."""
    learner_ids = []
    positions, questions, concepts, labels, probs = [], [], [], [], []
    for batch in batches:
        with no_grad():
            preds, _ = model.forward(batch)
        if batch.concepts.ndim == 3:
            first_concept = batch.concepts[:, :, 0]
        else:
            first_concept = batch.concepts
        for b in range(batch.size):
            for t in range(batch.length):
                if not batch.valid[b, t]:
                    continue
                learner_ids.append(batch.learner_ids[b])
                positions.append(batch.offsets[b] + t)
                questions.append(batch.questions[b, t])
                concepts.append(first_concept[b, t])
                labels.append(batch.responses[b, t])
                probs.append(preds.data[b, t])
    return PredictionSet(
        learner_ids=learner_ids, positions=np.array(positions, dtype=np.int64),
        question_ids=np.array(questions, dtype=np.int64),
        concept_ids=np.array(concepts, dtype=np.int64),
        labels=np.array(labels, dtype=np.int64),
        probabilities=np.array(probs, dtype=np.float64))


@dataclass
class AblationRow:
    variant: str
    mean_auc: float
    std_auc: float
    folds: list = field(default_factory=list)


def ablation_suite(corpus, variants, model_config, train_config):
    """Cross-validate each variant and tabulate mean/std/per-fold AUC.

    model_config supplies everything but the variant name, which is
    overridden per row.
    """
    from dataclasses import replace

    from .training import cross_validate

    rows = []
    for variant in variants:
        cfg = replace(model_config, variant=variant)
        records, mean_auc, std_auc = cross_validate(corpus, cfg, train_config)
        rows.append(AblationRow(
            variant=variant, mean_auc=mean_auc, std_auc=std_auc,
            folds=[r.test_auc for r in records]))
    return rows


def write_ablation_csv(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["variant", "mean_auc", "std_auc", "folds"])
        for row in rows:
            writer.writerow([
                row.variant, f"{row.mean_auc:.6f}", f"{row.std_auc:.6f}",
                ";".join(f"{a:.6f}" for a in row.folds)])


def format_ablation_table(rows):
    """Fixed-width text table mirroring the CSV schema."""
    width = max([len("variant")] + [len(r.variant) for r in rows])
    lines = [f"{'variant':<{width}}  {'mean AUC':>9}  {'std':>7}  folds"]
    for row in rows:
        folds = " ".join(f"{a:.4f}" for a in row.folds)
        lines.append(f"{row.variant:<{width}}  {row.mean_auc:>9.4f}  "
                     f"{row.std_auc:>7.4f}  {folds}")
    return "\n".join(lines)
