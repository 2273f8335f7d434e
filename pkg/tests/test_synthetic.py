"""Simulator behavior: rates, dynamics, determinism and the oracle AUC."""

import numpy as np
import pytest

from akt.data import truncate
from akt.errors import ConfigError, DataError
from akt.synthetic import GroundTruth, SimSpec, bayes_optimal_auc, generate


def flat_spec(**kwargs):
    """Everything deterministic and static unless overridden."""
    base = dict(num_learners=20, num_concepts=4, questions_per_concept=5,
                difficulty_mean=0.0, difficulty_spread=0.0,
                ability_spread=0.0, learn_rate=0.0, forget_rate=0.0,
                sequence_length=50, seed=0)
    base.update(kwargs)
    return SimSpec(**base)


def correct_rate(sequences):
    flat = [i.correct for s in sequences for i in s.interactions]
    return np.mean(flat)


# ---- marginal statistics ---------------------------------------------------------


def test_neutral_world_answers_half_correct():
    sequences, truth = generate(flat_spec(num_learners=200))
    assert correct_rate(sequences) == pytest.approx(0.5, abs=0.02)
    for probs in truth.probabilities.values():
        np.testing.assert_array_equal(probs, np.full(50, 0.5))


def test_easy_questions_are_mostly_answered_right():
    # ability 0 against difficulty -3 gives sigmoid(3) ~ 0.953
    sequences, truth = generate(flat_spec(num_learners=100,
                                          difficulty_mean=-3.0))
    assert correct_rate(sequences) > 0.94
    for probs in truth.probabilities.values():
        np.testing.assert_allclose(probs, 1 / (1 + np.exp(-3.0)), atol=1e-12)


def test_hard_questions_are_mostly_answered_wrong():
    sequences, _ = generate(flat_spec(num_learners=100, difficulty_mean=3.0))
    assert correct_rate(sequences) < 0.06


def test_difficulties_center_on_the_requested_mean():
    _, truth = generate(SimSpec(num_learners=1, num_concepts=20,
                                questions_per_concept=50,
                                difficulty_mean=2.0, difficulty_spread=0.5,
                                seed=3))
    assert truth.difficulties.mean() == pytest.approx(2.0, abs=0.05)
    assert truth.difficulties.std() == pytest.approx(0.5, abs=0.05)


# ---- structure --------------------------------------------------------------------


def test_questions_map_to_their_concept_block():
    spec = flat_spec(num_learners=30, difficulty_spread=1.0)
    sequences, truth = generate(spec)
    for seq in sequences:
        for inter in seq.interactions:
            expected = (inter.question_id - 1) // spec.questions_per_concept
            assert inter.concept_ids == (expected + 1,)
    np.testing.assert_array_equal(
        truth.question_concepts,
        np.arange(spec.num_questions) // spec.questions_per_concept + 1)


def test_emitted_shapes_match_the_spec():
    spec = flat_spec(num_learners=7, sequence_length=13)
    sequences, truth = generate(spec)
    assert len(sequences) == 7
    assert all(len(s) == 13 for s in sequences)
    assert len(truth.probabilities) == 7
    assert truth.difficulties.shape == (spec.num_questions,)
    ids = [s.learner_id for s in sequences]
    assert len(set(ids)) == 7
    assert all(i.correct in (0, 1) for s in sequences for i in s.interactions)


def test_practice_raises_success_probability():
    # one concept, no forgetting: ability climbs by learn_rate per step
    spec = flat_spec(num_learners=5, num_concepts=1, learn_rate=0.3)
    _, truth = generate(spec)
    for probs in truth.probabilities.values():
        assert (np.diff(probs) > 0).all()
        expected = 1 / (1 + np.exp(-0.3 * np.arange(50)))
        np.testing.assert_allclose(probs, expected, atol=1e-12)


def test_total_forgetting_keeps_only_unbroken_practice():
    # with forget_rate 1 an untouched concept resets to baseline, so
    # ability reflects exactly the run of consecutive practice steps
    spec = flat_spec(num_learners=10, num_concepts=2, learn_rate=0.5,
                     forget_rate=1.0)
    sequences, truth = generate(spec)
    for seq in sequences:
        probs = truth.probabilities[seq.learner_id]
        concepts = [i.concept_ids[0] for i in seq.interactions]
        run = 0
        for t, concept in enumerate(concepts):
            if t > 0 and concept == concepts[t - 1]:
                run += 1
            else:
                run = 0
            expected = 1 / (1 + np.exp(-0.5 * run))
            assert probs[t] == pytest.approx(expected, abs=1e-12), f"t={t}"


def test_spec_guards():
    with pytest.raises(ConfigError):
        generate(flat_spec(num_learners=0))
    with pytest.raises(ConfigError):
        generate(flat_spec(forget_rate=1.5))
    with pytest.raises(ConfigError):
        generate(flat_spec(difficulty_spread=-1.0))


# ---- determinism ---------------------------------------------------------------------


def test_same_seed_regenerates_the_corpus():
    spec = SimSpec(num_learners=12, num_concepts=3, questions_per_concept=4,
                   sequence_length=20, seed=42)
    seq_a, truth_a = generate(spec)
    seq_b, truth_b = generate(spec)
    assert seq_a == seq_b
    np.testing.assert_array_equal(truth_a.difficulties, truth_b.difficulties)
    for lid in truth_a.probabilities:
        np.testing.assert_array_equal(truth_a.probabilities[lid],
                                      truth_b.probabilities[lid])


def test_different_seeds_diverge():
    base = dict(num_learners=12, num_concepts=3, questions_per_concept=4,
                sequence_length=20)
    seq_a, _ = generate(SimSpec(seed=1, **base))
    seq_b, _ = generate(SimSpec(seed=2, **base))
    assert seq_a != seq_b


def test_ground_truth_round_trips_through_json(tmp_path):
    spec = SimSpec(num_learners=3, num_concepts=2, questions_per_concept=2,
                   sequence_length=5, seed=9)
    _, truth = generate(spec)
    path = tmp_path / "truth.json"
    truth.save(path)
    back = GroundTruth.load(path)
    assert back.spec == spec
    np.testing.assert_array_equal(back.difficulties, truth.difficulties)
    np.testing.assert_array_equal(back.question_concepts,
                                  truth.question_concepts)
    for lid, probs in truth.probabilities.items():
        np.testing.assert_array_equal(back.probabilities[lid], probs)


# ---- oracle AUC ------------------------------------------------------------------------


def hand_truth(prob_rows):
    spec = flat_spec(num_learners=len(prob_rows),
                     sequence_length=len(prob_rows[0]))
    return GroundTruth(
        spec=spec, difficulties=np.zeros(spec.num_questions),
        question_concepts=np.arange(spec.num_questions) // 5 + 1,
        probabilities={f"l{i}": np.asarray(row)
                       for i, row in enumerate(prob_rows)})


def hand_sequences(label_rows, offset=0):
    from akt.data import Interaction, InteractionSequence
    return [InteractionSequence(
        f"l{i}", [Interaction(1, (1,), r) for r in row], offset)
        for i, row in enumerate(label_rows)]


def test_confident_truth_scores_one():
    truth = hand_truth([[0.99, 0.01, 0.99, 0.01]])
    seqs = hand_sequences([[1, 0, 1, 0]])
    assert bayes_optimal_auc(truth, seqs) == 1.0


def test_uninformative_truth_scores_half():
    truth = hand_truth([[0.5] * 6])
    seqs = hand_sequences([[1, 0, 1, 0, 0, 1]])
    assert bayes_optimal_auc(truth, seqs) == 0.5


def test_oracle_survives_truncation_chunks():
    spec = SimSpec(num_learners=15, num_concepts=3, questions_per_concept=4,
                   sequence_length=30, seed=5)
    sequences, truth = generate(spec)
    whole = bayes_optimal_auc(truth, sequences)
    chunked = bayes_optimal_auc(truth, truncate(sequences, max_len=7))
    assert chunked == whole


def test_oracle_rejects_unknown_learners():
    truth = hand_truth([[0.5, 0.5]])
    seqs = hand_sequences([[1, 0]])
    seqs[0] = type(seqs[0])("stranger", seqs[0].interactions, 0)
    with pytest.raises(DataError, match="stranger"):
        bayes_optimal_auc(truth, seqs)


def test_oracle_rejects_windows_past_the_truth():
    truth = hand_truth([[0.5, 0.5, 0.5]])
    seqs = hand_sequences([[1, 0, 1]], offset=1)
    with pytest.raises(DataError, match="shorter"):
        bayes_optimal_auc(truth, seqs)


def test_model_grade_data_is_learnable_but_bounded():
    # informative world: the oracle clears coin-flipping by a wide margin
    spec = SimSpec(num_learners=50, num_concepts=4, questions_per_concept=5,
                   difficulty_spread=1.5, ability_spread=1.0,
                   learn_rate=0.2, forget_rate=0.05, sequence_length=30,
                   seed=11)
    sequences, truth = generate(spec)
    oracle = bayes_optimal_auc(truth, sequences)
    assert 0.7 < oracle < 1.0
