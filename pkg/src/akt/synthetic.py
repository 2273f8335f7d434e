"""Latent-ability response simulator for controlled verification runs.

Deliberately not an attention process: each learner carries a hidden
ability per concept that rises with practice and decays exponentially
toward the learner's baseline otherwise, and responses are Bernoulli draws
through a sigmoid link of ability minus question difficulty. A model that
exploits recency and difficulty should approach, and cannot beat, the AUC
of the generating probabilities.
"""

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import Interaction, InteractionSequence
from .errors import ConfigError, DataError
from .evaluation import auc


@dataclass(frozen=True)
class SimSpec:
    num_learners: int = 500
    num_concepts: int = 20
    questions_per_concept: int = 10
    difficulty_mean: float = 0.0
    difficulty_spread: float = 1.0
    ability_spread: float = 1.0
    learn_rate: float = 0.2
    forget_rate: float = 0.05
    sequence_length: int = 50
    seed: int = 0

    @property
    def num_questions(self):
        return self.num_concepts * self.questions_per_concept

    def validate(self):
        if min(self.num_learners, self.num_concepts,
               self.questions_per_concept, self.sequence_length) < 1:
            raise ConfigError("simulator counts must all be >= 1")
        if not 0.0 <= self.forget_rate <= 1.0:
            raise ConfigError("forget_rate must lie in [0, 1]")
        if self.difficulty_spread < 0 or self.ability_spread < 0:
            raise ConfigError("spreads must be non-negative")


@dataclass
class GroundTruth:
    """Generator state retained for oracle evaluation.

    probabilities maps learner_id to the per-step true correctness
    probability, aligned with the emitted (untruncated) sequence.
    """

    spec: SimSpec
    difficulties: np.ndarray
    question_concepts: np.ndarray
    probabilities: dict = field(default_factory=dict)

    def save(self, path):
        payload = {
            "spec": asdict(self.spec),
            "difficulties": self.difficulties.tolist(),
            "question_concepts": self.question_concepts.tolist(),
            "probabilities": {k: v.tolist()
                              for k, v in self.probabilities.items()},
        }
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(payload, handle)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as handle:
            payload = json.load(handle)
        return cls(
            spec=SimSpec(**payload["spec"]),
            difficulties=np.asarray(payload["difficulties"]),
            question_concepts=np.asarray(payload["question_concepts"],
                                         dtype=np.int64),
            probabilities={k: np.asarray(v)
                           for k, v in payload["probabilities"].items()},
        )


def _sigmoid(x):
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                    np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


def generate(spec):
    """Simulate a corpus; returns (sequences, GroundTruth).

    Question q (1-based) belongs to concept (q-1) // questions_per_concept
    + 1. Learners evolve independently on seeds spawned from spec.seed, so
    the corpus is reproducible and parallelizable per learner.
    """
    spec.validate()
    children = np.random.SeedSequence(spec.seed).spawn(spec.num_learners + 1)
    shared = np.random.default_rng(children[0])
    difficulties = spec.difficulty_mean + \
        spec.difficulty_spread * shared.standard_normal(spec.num_questions)
    question_concepts = np.arange(spec.num_questions) \
        // spec.questions_per_concept + 1

    width = len(str(spec.num_learners))
    sequences = []
    truth = GroundTruth(spec=spec, difficulties=difficulties,
                        question_concepts=question_concepts.astype(np.int64))
    for i in range(spec.num_learners):
        rng = np.random.default_rng(children[i + 1])
        learner_id = f"sim-{i + 1:0{width}d}"
        baseline = spec.ability_spread * rng.standard_normal()
        abilities = np.full(spec.num_concepts, baseline)
        interactions = []
        probs = np.empty(spec.sequence_length)
        for t in range(spec.sequence_length):
            q = int(rng.integers(spec.num_questions))
            c = q // spec.questions_per_concept
            p = float(_sigmoid(abilities[c] - difficulties[q]))
            r = int(rng.random() < p)
            probs[t] = p
            interactions.append(Interaction(q + 1, (c + 1,), r))
            # Practice strengthens the touched concept; all others decay
            # exponentially toward the learner's baseline.
            practiced = abilities[c]
            abilities = baseline + (abilities - baseline) * (1.0 - spec.forget_rate)
            abilities[c] = practiced + spec.learn_rate
        sequences.append(InteractionSequence(learner_id, interactions))
        truth.probabilities[learner_id] = probs
    return sequences, truth


def bayes_optimal_auc(truth, sequences):
    """AUC of the true generating probabilities against realized labels.

    An upper reference for any learned model up to sampling noise.
    Sequences may be truncation chunks; offsets align them with the
    retained probabilities.
    """
    labels, probs = [], []
    for seq in sequences:
        stored = truth.probabilities.get(seq.learner_id)
        if stored is None:
            raise DataError(f"no ground truth for learner "
                            f"{seq.learner_id!r}")
        window = stored[seq.offset:seq.offset + len(seq)]
        if len(window) != len(seq):
            raise DataError(f"ground truth for {seq.learner_id!r} is "
                            f"shorter than the sequence")
        probs.extend(window)
        labels.extend(inter.correct for inter in seq.interactions)
    return auc(np.array(labels), np.array(probs))
