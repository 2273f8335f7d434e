import numpy as np
import pytest

from akt.data import Batch, Corpus, DatasetMeta, parse_csv

HEADER = "learner_id,order_id,question_id,concept_ids,correct\n"


def write_log(path, rows):
    """Write a response log CSV from (learner, order, question, concepts,
    correct) tuples; question may be '' and concepts is a ';' string."""
    lines = [HEADER]
    for row in rows:
        lines.append(",".join(str(v) for v in row) + "\n")
    path.write_text("".join(lines), encoding="utf-8")
    return path


def toy_rows(num_learners=6, length=12, num_concepts=4, num_questions=9,
             seed=0):
    """Rows for a small corpus with questions; every ID appears at least
    once so dense re-indexing is the identity."""
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(num_learners):
        for t in range(length):
            q = (i * length + t) % num_questions + 1
            c = (q - 1) % num_concepts + 1
            rows.append((f"learner-{i}", t, q, c, int(rng.integers(0, 2))))
    return rows


@pytest.fixture
def toy_corpus(tmp_path):
    path = write_log(tmp_path / "toy.csv", toy_rows())
    return parse_csv(path)


def toy_batch(batch_size=2, length=6, num_concepts=4, num_questions=9,
              seed=0, holes=True):
    """A padded batch of random interactions plus its matching meta."""
    rng = np.random.default_rng(seed)
    valid = np.ones((batch_size, length), dtype=bool)
    if holes and length > 2:
        valid[0, -2:] = False
    questions = rng.integers(1, num_questions + 1, (batch_size, length))
    concepts = (questions - 1) % num_concepts + 1
    batch = Batch(
        questions=np.where(valid, questions, 0),
        concepts=np.where(valid, concepts, 0),
        responses=np.where(valid, rng.integers(0, 2, (batch_size, length)), 0),
        valid=valid,
        learner_ids=[f"b{i}" for i in range(batch_size)],
        offsets=[0] * batch_size,
    )
    meta = DatasetMeta(num_concepts=num_concepts, num_questions=num_questions,
                       num_learners=batch_size,
                       num_responses=int(valid.sum()))
    return batch, meta
