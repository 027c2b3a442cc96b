"""Recall task data: worked example, variants, thoroughness flags."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from worldlab.envs import make_env
from worldlab.envs.recall import (RecallStream, TokenRecallEnv, recall_sequence,
                                  recall_variants, stream_is_thorough)

V = 10  # RECALL encodes as token id == vocab


class TestRecallSequence:
    def test_worked_example_target_rule(self):
        # inputs 4, 3, 6, RECALL, 3, RECALL -> targets 4, 3, 6, 4, 3, 4
        inputs = np.array([4, 3, 6, V, 3, V])
        targets = np.where(inputs == V, inputs[0], inputs)
        np.testing.assert_array_equal(targets, [4, 3, 6, 4, 3, 4])
        # and the generator applies exactly that rule
        ins, tgt = recall_sequence(0, length=12, vocab=V, flip_p=0.3)
        np.testing.assert_array_equal(tgt, np.where(ins == V, ins[0], ins))

    def test_first_position_never_recall_last_always(self):
        for seed in range(50):
            ins, _ = recall_sequence(seed, length=12, vocab=V, flip_p=0.3)
            assert ins[0] != V and ins[-1] == V

    def test_flip_p_zero_forces_only_final_recall(self):
        ins, tgt = recall_sequence(3, length=12, vocab=V, flip_p=0.0)
        assert (ins[:-1] != V).all() and ins[-1] == V
        assert tgt[-1] == ins[0]
        np.testing.assert_array_equal(tgt[:-1], ins[:-1])

    def test_flip_p_one_everything_recalls_target(self):
        ins, tgt = recall_sequence(4, length=12, vocab=V, flip_p=1.0)
        assert (ins[1:] == V).all()
        assert (tgt[1:] == ins[0]).all()

    def test_rejects_degenerate_sizes(self):
        with pytest.raises(ValueError):
            recall_sequence(0, length=1, vocab=V)
        with pytest.raises(ValueError):
            recall_sequence(0, length=5, vocab=1)


class TestVariants:
    def test_disentangled_answers_both_queries(self, rng):
        stream = recall_variants("disentangled", length=6, vocab=4)
        row = stream.sample(rng)
        assert (row["inputs"] != 4).all()  # never RECALL
        np.testing.assert_array_equal(row["repeat_targets"], row["inputs"])
        assert (row["recall_targets"] == row["inputs"][0]).all()

    def test_reminder_noise_zero_prob_equals_seq2seq(self):
        a = recall_variants("seq2seq").sample(np.random.default_rng(7))
        b = recall_variants("reminder_noise", noise_p=0.0).sample(np.random.default_rng(7))
        np.testing.assert_array_equal(a["inputs"], b["inputs"])
        np.testing.assert_array_equal(a["targets"], b["targets"])

    def test_gap_shift_zero_equals_reminder_noise(self):
        a = recall_variants("reminder_noise").sample(np.random.default_rng(11))
        b = recall_variants("gap_shift", gap=0).sample(np.random.default_rng(11))
        np.testing.assert_array_equal(a["inputs"], b["inputs"])
        np.testing.assert_array_equal(a["targets"], b["targets"])

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 9999), gap=st.integers(2, 6))
    def test_gap_shift_suppresses_recall_pressure_before_gap(self, seed, gap):
        stream = recall_variants("gap_shift", gap=gap)
        row = stream.sample(np.random.default_rng(seed))
        ins, tgt = row["inputs"], row["targets"]
        assert (ins[1:gap] != V).all()
        # a reminder event shows up as a target differing from the rule
        rule = np.where(ins == V, ins[0], ins)
        np.testing.assert_array_equal(tgt[:gap], rule[:gap])

    def test_reminder_noise_appears_at_declared_rate(self):
        stream = recall_variants("reminder_noise", noise_p=0.3)
        rng = np.random.default_rng(0)
        batch = stream.sample_batch(rng, 800)
        ins, tgt = batch["inputs"], batch["targets"]
        rule = np.where(ins == V, ins[..., :1], ins)
        flips = (tgt != rule) & (ins != V)
        plain = ins[:, 1:] != V
        rate = flips[:, 1:][plain].mean()
        assert 0.2 < rate / (1 - 1 / V) < 0.4  # visible flips exclude accidental matches

    def test_clean_sampling_strips_noise(self):
        stream = recall_variants("reminder_noise", noise_p=0.5)
        row = stream.sample(np.random.default_rng(13), clean=True)
        rule = np.where(row["inputs"] == V, row["inputs"][0], row["inputs"])
        np.testing.assert_array_equal(row["targets"], rule)

    def test_unknown_scenario_rejected(self):
        with pytest.raises(ValueError):
            recall_variants("oracle")


class TestThoroughness:
    def test_disentangled_is_thorough(self):
        assert stream_is_thorough(recall_variants("disentangled"))

    def test_seq2seq_is_not(self):
        assert not stream_is_thorough(recall_variants("seq2seq"))

    def test_gap_shift_violates_for_positive_gap(self):
        assert not stream_is_thorough(recall_variants("gap_shift", gap=3))
        assert stream_is_thorough(recall_variants("gap_shift", gap=0))

    def test_every_disentangled_step_carries_a_recall_query(self):
        env = make_env("recall", seed=5, vocab=4, length=5)
        for _ in range(5):
            packet = env.advance()
            kinds = {k[0] for k in packet.queries}
            assert "recall" in kinds
            # the recall answers are pinned by the step-1 instruction
            first = env.tokens[0]
            for key, ans in zip(packet.queries, packet.answers):
                if key[0] == "recall":
                    assert bool(ans) == (key[1] == first)


class TestTokenRecallEnv:
    def test_oracle_consistency_over_many_packets(self):
        for seed in range(40):
            env = make_env("recall", seed=seed, vocab=4, length=5)
            for _ in range(5):
                env.check_packet(env.advance())

    def test_stream_determinism(self):
        def collect(seed):
            env = TokenRecallEnv(seed=seed, vocab=4, length=5)
            return [(p.instructions, p.answers.tolist()) for p in
                    (env.advance() for _ in range(5))]
        assert collect(9) == collect(9)

    def test_instruction_announces_current_token(self):
        env = TokenRecallEnv(seed=2, vocab=4, length=5)
        p = env.advance()
        (key, flag), = p.instructions
        assert key == ("repeat", env.tokens[0]) and flag is True

    def test_step_limit_enforced(self):
        env = TokenRecallEnv(seed=0, vocab=3, length=2)
        env.advance(), env.advance()
        with pytest.raises(ValueError):
            env.advance()
