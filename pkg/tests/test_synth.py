"""Generative-oracle tests: determinism, outcome law, label consistency,
stream signal encoding, and the ideal-predictor accuracy bound."""

import numpy as np
import pytest
from scipy.special import expit

from edustate import rasch, synth
from edustate.domain import label_understanding, validate_session
from edustate.errors import ConfigError
from edustate.features import GRID_RATE


class TestConfig:
    def test_rejects_bad_values(self):
        with pytest.raises(ConfigError):
            synth.SynthConfig(n_users=0)
        with pytest.raises(ConfigError):
            synth.SynthConfig(state_sd=-1)
        with pytest.raises(ConfigError):
            synth.SynthConfig(stream_minutes=0.5)

    def test_streamless_config_allows_any_minutes(self):
        synth.SynthConfig(stream_minutes=0.0, generate_streams=False)


class TestBankStructure:
    def test_default_mix(self):
        bank = synth.build_item_bank(synth.SynthConfig(n_lectures=10))
        pretest = bank.of_kind("pretest_question")
        assert len(pretest) == 10
        assert [it.difficulty_level for it in pretest].count("easy") == 3
        assert [it.difficulty_level for it in pretest].count("medium") == 4
        assert [it.difficulty_level for it in pretest].count("hard") == 3
        assert len(bank.of_kind("trial_question")) == 5
        lectures = bank.lectures()
        assert len(lectures) == 10
        assert [it.difficulty_level for it in lectures].count("easy") == 3
        assert [it.difficulty_level for it in lectures].count("hard") == 3

    def test_question_plan_per_video_level(self):
        bank = synth.build_item_bank(synth.SynthConfig(n_lectures=10))
        for video in bank.lectures():
            levels = [q.difficulty_level for q in bank.questions_for_video(video.id)]
            assert len(levels) == 3
            if video.difficulty_level == "easy":
                assert sorted(levels) == ["easy", "easy", "medium"]
            elif video.difficulty_level == "medium":
                assert levels == ["medium"] * 3
            else:
                assert sorted(levels) == ["hard", "hard", "medium"]

    def test_200x30_grid_shape(self):
        # the layout used by the difficulty-recovery acceptance check
        config = synth.SynthConfig(n_users=200, n_lectures=10, generate_streams=False)
        bank = synth.build_item_bank(config)
        assert len(bank.of_kind("lecture_question")) == 30


class TestGenerate:
    def test_bit_identical_regeneration(self, small_synth):
        sessions, bank, truth = small_synth
        again_sessions, again_bank, again_truth = synth.generate(synth.SynthConfig(
            n_users=4, n_lectures=3, signal_strength=2.0, stream_minutes=1.0, seed=17,
        ))
        assert again_bank == bank
        assert list(again_sessions) == list(sessions)
        assert again_truth.theta == truth.theta
        assert again_truth.phi == truth.phi
        assert again_truth.understood == truth.understood

    def test_sessions_validate_clean(self, small_synth):
        sessions, bank, _ = small_synth
        for session in sessions:
            assert validate_session(session, bank) == []

    def test_labels_match_outcomes_and_responses(self, small_synth):
        sessions, bank, truth = small_synth
        for session in sessions:
            for lab in session.labels:
                assert lab.understood == truth.understood[(session.user, lab.lecture)]
                block = session.responses_for_video(bank, lab.lecture)
                assert label_understanding(block, bank) == lab.understood

    def test_consistency_rarely_forced(self):
        _, _, truth = synth.generate(synth.SynthConfig(
            n_users=30, n_lectures=10, generate_streams=False, seed=41,
        ))
        assert truth.n_forced <= 0.05 * len(truth.understood)

    def test_outcome_probability_law(self, small_synth):
        _, _, truth = small_synth
        for (user, lecture), p in truth.probability.items():
            want = expit(truth.theta[user] - (truth.b[lecture] + truth.phi[(user, lecture)]))
            assert p == pytest.approx(want, abs=1e-12)

    def test_outcome_frequency_converges(self):
        # the generator's draw mechanism reproduces its Bernoulli law
        rng = np.random.default_rng(7)
        p = np.array([0.1, 0.37, 0.5, 0.83, 0.97])
        n = 20000
        counts = np.zeros_like(p)
        for _ in range(n):
            counts += synth.draw_outcomes(p, rng)
        freq = counts / n
        se = np.sqrt(p * (1 - p) / n)
        assert np.all(np.abs(freq - p) <= 3 * se)

    def test_zero_ability_spread(self):
        config = synth.SynthConfig(
            n_users=3, n_lectures=800, ability_sd=0.0, state_sd=0.0,
            signal_strength=0.0, generate_streams=False, seed=9,
        )
        sessions, bank, truth = synth.generate(config)
        assert len(set(truth.theta.values())) == 1
        params = rasch.fit([r for s in sessions for r in s.responses])
        fitted = list(params.theta.values())
        assert max(fitted) - min(fitted) <= 0.1


class TestStreams:
    def test_shape_rate_and_range(self):
        st = synth.generate_stream(0.3, minutes=2, alpha=1.0, seed=5, segment_id="s")
        assert len(st) == 2 * 60 * GRID_RATE
        assert st.values.shape[1] == 51
        assert st.values.dtype == np.float32
        assert float(st.values.min()) >= 0.0 and float(st.values.max()) <= 1.0
        np.testing.assert_allclose(np.diff(st.times), 1.0 / GRID_RATE, atol=1e-12)

    def test_minutes_precondition(self):
        with pytest.raises(ConfigError):
            synth.generate_stream(0.0, minutes=0.5, seed=1)

    def test_seeded_determinism(self):
        a = synth.generate_stream(0.2, minutes=1, alpha=2.0, seed=12)
        b = synth.generate_stream(0.2, minutes=1, alpha=2.0, seed=12)
        assert a == b

    def test_alpha_zero_is_state_independent(self):
        def mean_over_draws(phi, seed0, n=1000):
            total = 0.0
            for k in range(n):
                st = synth.generate_stream(phi, minutes=1, alpha=0.0, seed=(seed0, k))
                total += float(st.values[:, 0].mean())
            return total / n

        shift = abs(mean_over_draws(1.0, 100) - mean_over_draws(-1.0, 200))
        assert shift < 0.01

    def test_alpha_two_separates_states(self):
        def mean_over_draws(phi, seed0, n=100):
            total = 0.0
            for k in range(n):
                st = synth.generate_stream(phi, minutes=1, alpha=2.0, seed=(seed0, k))
                total += float(st.values[:, 0].mean())
            return total / n

        separation = mean_over_draws(1.0, 300) - mean_over_draws(-1.0, 400)
        assert separation >= 0.3

    def test_event_rate_tracks_state(self):
        # pulses on the event channel show up as rate-of-change signal
        def pulse_frames(phi, seed):
            st = synth.generate_stream(phi, minutes=4, alpha=2.0, seed=seed)
            return int(np.sum(st.values[:, synth.EVENT_CHANNEL] == 1.0))

        high = np.mean([pulse_frames(+1.0, (1, k)) for k in range(30)])
        low = np.mean([pulse_frames(-1.0, (2, k)) for k in range(30)])
        assert high > low


class TestBayesAccuracy:
    def _truth(self, probs):
        cells = {(f"u{k}", "v01"): p for k, p in enumerate(probs)}
        return synth.SynthTruth(
            theta={}, b={}, phi={}, probability=cells,
            understood={c: p >= 0.5 for c, p in cells.items()}, n_forced=0,
        )

    def test_saturated_regime(self):
        truth = self._truth([expit(6.0), expit(-6.0), expit(8.0)])
        assert synth.bayes_accuracy(truth, n_resamples=20000) >= 0.995

    def test_coin_flip_regime(self):
        truth = self._truth([0.5] * 8)
        assert synth.bayes_accuracy(truth, n_resamples=50000) == pytest.approx(0.5, abs=0.01)

    def test_matches_closed_form(self):
        rng = np.random.default_rng(3)
        probs = rng.uniform(0.05, 0.95, 40)
        truth = self._truth(list(probs))
        exact = float(np.mean(np.maximum(probs, 1 - probs)))
        n = 200000
        got = synth.bayes_accuracy(truth, n_resamples=n, seed=1)
        se = np.sqrt(0.25 / (n * len(probs)))
        assert abs(got - exact) <= 4 * se + 1e-12

    def test_threshold_parameter(self):
        truth = self._truth([0.6, 0.4])
        # with threshold 0.7 both cells predict negative
        got = synth.bayes_accuracy(truth, threshold=0.7, n_resamples=50000, seed=2)
        assert got == pytest.approx(0.5 * (0.4 + 0.6), abs=0.01)
