"""Learner response logs: parsing, filters, truncation, folds and batches.

Input CSV schema (UTF-8, header row):

    learner_id  string
    order_id    integer, sorts interactions within a learner
    question_id integer, may be empty
    concept_ids one or more integers joined by ';'
    correct     0/1, other values only survive under a filter rule

IDs are densely re-indexed from 1 in sorted original-ID order; index 0 is
reserved as padding everywhere downstream. When any row lacks a question
ID the corpus is treated as question-free: the question count is 0, each
interaction falls back to its first concept as question ID, and Rasch
variants refuse to run.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError

MAX_SEQUENCE_LENGTH = 200
DEFAULT_BATCH_SIZE = 24

FILTER_RULES = ("drop-unnamed-concept", "drop-nonbinary-response")

PROFILES = {
    "none": (),
    "assistments2009": ("drop-unnamed-concept",),
    "assistments2015": ("drop-nonbinary-response",),
}

_COLUMNS = ("learner_id", "order_id", "question_id", "concept_ids", "correct")


@dataclass(frozen=True)
class Interaction:
    """One graded response; concept_ids holds every tag of the question."""

    question_id: int
    concept_ids: tuple
    correct: int


@dataclass
class InteractionSequence:
    """A learner's responses in order; offset locates a truncation chunk."""

    learner_id: str
    interactions: list
    offset: int = 0

    def __len__(self):
        return len(self.interactions)


@dataclass(frozen=True)
class DatasetMeta:
    num_concepts: int
    num_questions: int
    num_learners: int
    num_responses: int

    @property
    def has_questions(self):
        return self.num_questions > 0


@dataclass
class Corpus:
    """Parsed sequences plus the ID mappings needed to export artifacts."""

    sequences: list
    meta: DatasetMeta
    concept_ids: dict = field(default_factory=dict)
    question_ids: dict = field(default_factory=dict)
    question_concepts: dict = field(default_factory=dict)


@dataclass(frozen=True)
class FoldSplit:
    train: tuple
    val: tuple
    test: tuple


@dataclass
class Batch:
    """Padded index arrays; index 0 and mask False mark padding.

    concepts is (B, T) after repeat-mode expansion and (B, T, K) in
    average mode, with zero-filled unused slots.
    """

    questions: np.ndarray
    concepts: np.ndarray
    responses: np.ndarray
    valid: np.ndarray
    learner_ids: list
    offsets: list

    @property
    def size(self):
        return self.questions.shape[0]

    @property
    def length(self):
        return self.questions.shape[1]

    @property
    def interaction_count(self):
        return int(self.valid.sum())


def _resolve_rules(profile=None, rules=None):
    if rules is not None:
        unknown = [r for r in rules if r not in FILTER_RULES]
        if unknown:
            raise ConfigError(f"unknown filter rules {unknown}")
        return tuple(rules)
    if profile not in PROFILES:
        raise ConfigError(
            f"unknown dataset profile {profile!r}; choices: "
            f"{', '.join(sorted(PROFILES))}")
    return PROFILES[profile]


def parse_csv(path, profile="none", rules=None):
    """Read a response log into a Corpus, applying the profile's filters.

    Malformed rows fail with their line number. Rows removed by a filter
    rule are silently dropped; learners left without interactions vanish
    from the corpus.
    """
    active = _resolve_rules(profile, rules)
    rows = []
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None:
            raise DataError(f"{path}: empty file, expected a header row")
        missing = [c for c in _COLUMNS if c not in reader.fieldnames]
        if missing:
            raise DataError(f"{path}: missing columns {missing}")
        for line, row in enumerate(reader, start=2):
            rows.append(_parse_row(row, line, active))
    rows = [r for r in rows if r is not None]
    if not rows:
        raise DataError(f"{path}: no usable interactions")

    by_learner = {}
    for row in rows:
        by_learner.setdefault(row["learner"], []).append(row)
    for entries in by_learner.values():
        entries.sort(key=lambda r: r["order"])

    concept_originals = sorted({c for row in rows for c in row["concepts"]})
    concept_dense = {orig: i + 1 for i, orig in enumerate(concept_originals)}
    questions_present = all(row["question"] is not None for row in rows)
    if questions_present:
        question_originals = sorted({row["question"] for row in rows})
        question_dense = {orig: i + 1 for i, orig in enumerate(question_originals)}
    else:
        question_dense = {}

    sequences = []
    question_concepts = {}
    for learner, entries in by_learner.items():
        interactions = []
        for row in entries:
            concepts = tuple(concept_dense[c] for c in row["concepts"])
            if questions_present:
                question = question_dense[row["question"]]
            else:
                question = concepts[0]
            if question not in question_concepts:
                question_concepts[question] = concepts[0]
            interactions.append(Interaction(question, concepts, row["correct"]))
        sequences.append(InteractionSequence(learner, interactions))

    meta = DatasetMeta(
        num_concepts=len(concept_dense),
        num_questions=len(question_dense),
        num_learners=len(sequences),
        num_responses=sum(len(s) for s in sequences),
    )
    return Corpus(
        sequences=sequences,
        meta=meta,
        concept_ids={v: k for k, v in concept_dense.items()},
        question_ids={v: k for k, v in question_dense.items()},
        question_concepts=question_concepts,
    )


def _parse_row(row, line, rules):
    learner = (row.get("learner_id") or "").strip()
    if not learner:
        raise DataError(f"line {line}: empty learner_id")
    try:
        order = int(row["order_id"])
    except (TypeError, ValueError):
        raise DataError(f"line {line}: order_id must be an integer, "
                        f"got {row.get('order_id')!r}") from None

    question_raw = (row.get("question_id") or "").strip()
    if question_raw:
        try:
            question = int(question_raw)
        except ValueError:
            raise DataError(f"line {line}: question_id must be an integer, "
                            f"got {question_raw!r}") from None
    else:
        question = None

    concepts_raw = (row.get("concept_ids") or "").strip()
    concepts = []
    if concepts_raw:
        for part in concepts_raw.split(";"):
            part = part.strip()
            try:
                concepts.append(int(part))
            except ValueError:
                raise DataError(f"line {line}: bad concept id {part!r}") from None
    if not concepts:
        if "drop-unnamed-concept" in rules:
            return None
        raise DataError(f"line {line}: interaction has no named concept")

    correct_raw = (row.get("correct") or "").strip()
    try:
        correct = int(correct_raw)
    except ValueError:
        correct = None
    if correct not in (0, 1):
        if "drop-nonbinary-response" in rules:
            return None
        raise DataError(f"line {line}: correct must be 0 or 1, "
                        f"got {correct_raw!r}")

    return {"learner": learner, "order": order, "question": question,
            "concepts": concepts, "correct": correct}


def write_csv(sequences, path, question_ids=None, concept_ids=None):
    """Serialize sequences in the input schema; inverse of parse_csv.

    Optional dense-to-original maps restore the source IDs; without them
    the dense IDs are written, which re-parse to themselves.
    """
    question_ids = question_ids or {}
    concept_ids = concept_ids or {}
    counters = {}
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(_COLUMNS)
        for seq in sequences:
            for inter in seq.interactions:
                order = counters.get(seq.learner_id, 0)
                counters[seq.learner_id] = order + 1
                concepts = ";".join(
                    str(concept_ids.get(c, c)) for c in inter.concept_ids)
                writer.writerow([
                    seq.learner_id,
                    order,
                    question_ids.get(inter.question_id, inter.question_id),
                    concepts,
                    inter.correct,
                ])


def apply_filters(sequences, rules):
    """Drop interactions violating the rules, then empty sequences."""
    unknown = [r for r in rules if r not in FILTER_RULES]
    if unknown:
        raise ConfigError(f"unknown filter rules {unknown}")
    out = []
    for seq in sequences:
        kept = [
            inter for inter in seq.interactions
            if not ("drop-unnamed-concept" in rules and not inter.concept_ids)
            and not ("drop-nonbinary-response" in rules
                     and inter.correct not in (0, 1))
        ]
        if kept:
            out.append(InteractionSequence(seq.learner_id, kept, seq.offset))
    return out


def truncate(sequences, max_len=MAX_SEQUENCE_LENGTH):
    """Split long sequences into contiguous non-overlapping chunks."""
    if max_len < 1:
        raise ConfigError(f"max_len must be >= 1, got {max_len}")
    out = []
    for seq in sequences:
        for start in range(0, len(seq.interactions), max_len):
            piece = seq.interactions[start:start + max_len]
            out.append(InteractionSequence(
                seq.learner_id, list(piece), seq.offset + start))
    return out


def kfold_split(sequences, k=5, seed=0):
    """Learner-level folds: per fold 1/k test, 1/k validation, rest train.

    Fold i tests chunk i and validates chunk (i+1) mod k, so the k test
    sets partition the learners. Call this before truncation so a
    learner's chunks never straddle roles.
    """
    learners = list(dict.fromkeys(seq.learner_id for seq in sequences))
    if len(learners) < k:
        raise DataError(f"{len(learners)} learners cannot fill {k} folds")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(learners))
    chunks = [tuple(learners[i] for i in part)
              for part in np.array_split(order, k)]
    folds = []
    for i in range(k):
        test = chunks[i]
        val = chunks[(i + 1) % k]
        train = tuple(l for j, chunk in enumerate(chunks)
                      if j != i and j != (i + 1) % k for l in chunk)
        folds.append(FoldSplit(train=train, val=val, test=test))
    return folds


def select_learners(sequences, learner_ids):
    wanted = set(learner_ids)
    return [seq for seq in sequences if seq.learner_id in wanted]


def expand_multi_concept(sequences, mode):
    """Resolve multi-tagged interactions for the chosen embedding scheme.

    repeat duplicates an interaction once per concept tag, in tag order;
    average leaves sequences untouched (the embedding layer averages).
    """
    if mode == "average":
        return [InteractionSequence(s.learner_id, list(s.interactions),
                                    s.offset) for s in sequences]
    if mode != "repeat":
        raise ConfigError(f"unknown multi-concept mode {mode!r}")
    out = []
    for seq in sequences:
        expanded = []
        for inter in seq.interactions:
            for concept in inter.concept_ids:
                expanded.append(Interaction(
                    inter.question_id, (concept,), inter.correct))
        out.append(InteractionSequence(seq.learner_id, expanded, seq.offset))
    return out


def make_batches(sequences, batch_size=DEFAULT_BATCH_SIZE, rng=None,
                 multi_concept="repeat"):
    """Group sequences into padded batches of at most batch_size learners.

    Passing an rng shuffles the sequence order (training epochs); without
    one the input order is kept (evaluation). Sequences are padded to the
    longest member of their own batch.
    """
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    if multi_concept not in ("repeat", "average"):
        raise ConfigError(f"unknown multi-concept mode {multi_concept!r}")
    order = list(sequences)
    if rng is not None:
        rng.shuffle(order)
    batches = []
    for start in range(0, len(order), batch_size):
        group = order[start:start + batch_size]
        batches.append(_build_batch(group, multi_concept))
    return batches


def _build_batch(group, multi_concept):
    size = len(group)
    length = max(len(seq) for seq in group)
    questions = np.zeros((size, length), dtype=np.int64)
    responses = np.zeros((size, length), dtype=np.int64)
    valid = np.zeros((size, length), dtype=bool)
    if multi_concept == "average":
        slots = max(len(inter.concept_ids)
                    for seq in group for inter in seq.interactions)
        concepts = np.zeros((size, length, slots), dtype=np.int64)
    else:
        concepts = np.zeros((size, length), dtype=np.int64)
    for b, seq in enumerate(group):
        for t, inter in enumerate(seq.interactions):
            questions[b, t] = inter.question_id
            responses[b, t] = inter.correct
            valid[b, t] = True
            if multi_concept == "average":
                tags = inter.concept_ids
                concepts[b, t, :len(tags)] = tags
            else:
                if len(inter.concept_ids) != 1:
                    raise DataError(
                        "repeat-mode batching needs single-concept "
                        "interactions; run expand_multi_concept first")
                concepts[b, t] = inter.concept_ids[0]
    return Batch(questions=questions, concepts=concepts, responses=responses,
                 valid=valid, learner_ids=[seq.learner_id for seq in group],
                 offsets=[seq.offset for seq in group])
