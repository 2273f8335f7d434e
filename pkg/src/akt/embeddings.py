"""Embedding tables for question and question-response inputs.

Two families:

* PlainEmbeddings indexes questions by their concept (one vector per
  concept, one per (concept, response) pair).
* RaschEmbeddings adds a scalar difficulty mu_q per question and a
  variation vector per concept, so a question deviates from its concept
  prototype along a learned direction scaled by its difficulty:
  x_t = c + mu * d and y_t = (c + g_r) + mu * f.

Both families share the ID convention of the data module: concept,
question and response indices are 1-based with 0 reserved for padding.
Padded positions resolve to row 0 of each table; every gradient path from
a padded position is cut by the loss mask and the attention masks, so the
rows they touch receive exactly zero gradient.
"""

import numpy as np

from .errors import ConfigError, DataError, ShapeError
from .tensor import Tensor, gather, no_grad, tsum, xavier_init


def _rows(ids):
    """Map 1-based IDs (0 = padding) onto 0-based table rows."""
    return np.maximum(np.asarray(ids, dtype=np.int64) - 1, 0)


def _mean_over_slots(table, row_index, valid):
    """Mean of table rows over the last axis of a slotted index array.

    row_index is (..., K) of 0-based rows, valid (..., K) boolean. Rows in
    invalid slots are gathered but weighted zero; all-invalid positions
    divide by one instead of zero and come out as row 0's value times 0.
    """
    looked_up = gather(table, row_index)
    counts = np.maximum(valid.sum(axis=-1, keepdims=True), 1)
    weights = (valid / counts).astype(table.data.dtype)
    return tsum(looked_up * Tensor(weights[..., None]), axis=-2)


def _lookup(table, concepts):
    """Gather concept rows; (.., K) index arrays are averaged over slots."""
    concepts = np.asarray(concepts, dtype=np.int64)
    if concepts.ndim == 3:
        return _mean_over_slots(table, _rows(concepts), concepts > 0)
    return gather(table, _rows(concepts))


class PlainEmbeddings:
    """Concept-indexed tables: C question rows, 2C interaction rows.

    The interaction table stacks the incorrect-response block first, so
    (concept c, response r) lives at row (c - 1) + C * r.
    """

    uses_difficulty = False

    def __init__(self, num_concepts, dim, rng):
        if num_concepts < 1:
            raise ConfigError("plain embeddings need at least one concept")
        self.num_concepts = num_concepts
        self.dim = dim
        self.concept = xavier_init((num_concepts, dim), rng)
        self.interaction = xavier_init((2 * num_concepts, dim), rng)

    def parameters(self):
        return {"concept": self.concept, "interaction": self.interaction}

    def question_embedding(self, concepts, questions=None):
        return _lookup(self.concept, concepts)

    def response_embedding(self, concepts, questions, responses):
        concepts = np.asarray(concepts, dtype=np.int64)
        responses = np.clip(np.asarray(responses, dtype=np.int64), 0, 1)
        if concepts.ndim == 3:
            rows = _rows(concepts) + self.num_concepts * responses[..., None]
            return _mean_over_slots(self.interaction, rows, concepts > 0)
        rows = _rows(concepts) + self.num_concepts * responses
        return gather(self.interaction, rows)


class RaschEmbeddings:
    """Difficulty-scaled tables sharing the concept prototypes.

    The response-side variation f is concept-indexed by default (the
    response offset g already separates correct from incorrect); setting
    response_variation="pair" gives every (concept, response) pair its own
    f row instead.
    """

    uses_difficulty = True

    def __init__(self, num_concepts, num_questions, dim, rng,
                 response_variation="concept"):
        if num_concepts < 1:
            raise ConfigError("Rasch embeddings need at least one concept")
        if num_questions < 1:
            raise ConfigError("Rasch embeddings need question IDs")
        if response_variation not in ("concept", "pair"):
            raise ConfigError(
                f"unknown response_variation {response_variation!r}")
        self.num_concepts = num_concepts
        self.num_questions = num_questions
        self.dim = dim
        self.response_variation = response_variation
        self.concept = xavier_init((num_concepts, dim), rng)
        self.variation = xavier_init((num_concepts, dim), rng)
        self.response_offset = xavier_init((2, dim), rng)
        rows = 2 * num_concepts if response_variation == "pair" else num_concepts
        self.response_variation_table = xavier_init((rows, dim), rng)
        # mu starts at zero: every question begins at its concept prototype.
        self.difficulty = Tensor(np.zeros(num_questions), requires_grad=True)

    def parameters(self):
        return {
            "concept": self.concept,
            "variation": self.variation,
            "response_offset": self.response_offset,
            "response_variation": self.response_variation_table,
            "difficulty": self.difficulty,
        }

    def _difficulty_factor(self, questions):
        questions = np.asarray(questions, dtype=np.int64)
        mu = gather(self.difficulty, _rows(questions))
        return mu.reshape(*questions.shape, 1)

    def question_embedding(self, concepts, questions):
        base = _lookup(self.concept, concepts)
        spread = _lookup(self.variation, concepts)
        return base + self._difficulty_factor(questions) * spread

    def response_embedding(self, concepts, questions, responses):
        concepts = np.asarray(concepts, dtype=np.int64)
        responses = np.clip(np.asarray(responses, dtype=np.int64), 0, 1)
        base = _lookup(self.concept, concepts)
        offset = gather(self.response_offset, responses)
        if self.response_variation == "pair":
            if concepts.ndim == 3:
                rows = _rows(concepts) + self.num_concepts * responses[..., None]
                spread = _mean_over_slots(
                    self.response_variation_table, rows, concepts > 0)
            else:
                rows = _rows(concepts) + self.num_concepts * responses
                spread = gather(self.response_variation_table, rows)
        else:
            spread = _lookup(self.response_variation_table, concepts)
        return base + offset + self._difficulty_factor(questions) * spread


def build_embeddings(meta, dim, rng, rasch=False, response_variation="concept"):
    """Pick the table family matching the variant and dataset."""
    if rasch:
        return RaschEmbeddings(meta.num_concepts, meta.num_questions, dim,
                               rng, response_variation=response_variation)
    return PlainEmbeddings(meta.num_concepts, dim, rng)


# ---- single-interaction views ---------------------------------------------


def _check_ids(table, question_id, concept_ids, response=None):
    for concept in concept_ids:
        if not 1 <= concept <= table.num_concepts:
            raise DataError(f"concept id {concept} out of range "
                            f"[1, {table.num_concepts}]")
    if table.uses_difficulty and not 1 <= question_id <= table.num_questions:
        raise DataError(f"question id {question_id} out of range "
                        f"[1, {table.num_questions}]")
    if response is not None and response not in (0, 1):
        raise DataError(f"response must be 0 or 1, got {response}")


def _single_item_indices(question_id, concept_ids, mode):
    concept_ids = tuple(int(c) for c in concept_ids)
    if not concept_ids:
        raise DataError("interaction carries no concept")
    if mode == "average":
        concepts = np.asarray(concept_ids).reshape(1, 1, len(concept_ids))
    elif mode == "repeat":
        if len(concept_ids) != 1:
            raise ConfigError("repeat mode expects one concept per "
                              "interaction; expand the sequence first")
        concepts = np.asarray(concept_ids).reshape(1, 1)
    else:
        raise ConfigError(f"unknown multi-concept mode {mode!r}")
    questions = np.asarray([[int(question_id)]])
    return concepts, questions


def embed_question(question_id, concept_ids, table, mode="repeat"):
    """One x_t as a 1-D vector; average mode means over the concept list."""
    _check_ids(table, question_id, concept_ids)
    concepts, questions = _single_item_indices(question_id, concept_ids, mode)
    with no_grad():
        out = table.question_embedding(concepts, questions)
    return out.data[0, 0]


def embed_response(question_id, concept_ids, response, table, mode="repeat"):
    """One y_t as a 1-D vector for a graded response in {0, 1}."""
    _check_ids(table, question_id, concept_ids, response)
    concepts, questions = _single_item_indices(question_id, concept_ids, mode)
    responses = np.asarray([[int(response)]])
    with no_grad():
        out = table.response_embedding(concepts, questions, responses)
    return out.data[0, 0]


# ---- parameter accounting --------------------------------------------------


def count_parameters(meta, dim, mode):
    """Closed-form trainable-scalar count for one side of one table family.

    The question and response sides of the Rasch family both list the Q
    difficulty scalars, which are allocated once and shared.
    """
    c, q = meta.num_concepts, meta.num_questions
    if mode == "rasch-question":
        return 2 * c * dim + q
    if mode == "rasch-response":
        return (c + 2) * dim + q
    if mode == "rasch-response-pair":
        return 2 * (c + 1) * dim + q
    if mode == "plain-question":
        return c * dim
    if mode == "plain-response":
        return 2 * c * dim
    raise ConfigError(f"unknown parameter-count mode {mode!r}")


# ---- positional encodings ---------------------------------------------------


def sinusoidal_table(length, dim, dtype=np.float64):
    """Interleaved sine/cosine position table; position 0 is [0,1,0,1,...]."""
    positions = np.arange(length, dtype=dtype)[:, None]
    exponents = np.arange(0, dim, 2, dtype=dtype) / dim
    angles = positions / np.power(10000.0, exponents)
    table = np.zeros((length, dim), dtype=dtype)
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles[:, : dim // 2])
    return table


class PositionalEncoding:
    """Per-position vectors added to x_t and y_t; kind none/fixed/learnable."""

    KINDS = ("none", "fixed", "learnable")

    def __init__(self, kind, max_len, dim, rng=None):
        if kind not in self.KINDS:
            raise ConfigError(f"unknown positional encoding kind {kind!r}")
        self.kind = kind
        self.max_len = max_len
        self.dim = dim
        if kind == "fixed":
            self.table = Tensor(sinusoidal_table(max_len, dim))
        elif kind == "learnable":
            self.table = xavier_init((max_len, dim), rng)
        else:
            self.table = None

    def parameters(self):
        if self.kind == "learnable":
            return {"table": self.table}
        return {}

    def vector(self, position):
        """The encoding of one 0-based position as a plain array."""
        if position >= self.max_len:
            raise ShapeError(f"position {position} beyond maximum "
                             f"sequence length {self.max_len}")
        if self.table is None:
            return np.zeros(self.dim)
        return np.array(self.table.data[position])

    def apply(self, x):
        """Add the first T rows of the table to a (B, T, D) tensor."""
        if self.table is None:
            return x
        length = x.shape[1]
        if length > self.max_len:
            raise ShapeError(f"sequence length {length} beyond maximum "
                             f"{self.max_len}")
        return x + gather(self.table, np.arange(length))
