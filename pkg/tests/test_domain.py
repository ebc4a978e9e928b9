"""Domain type invariants and labeling rules."""

import numpy as np
import pytest

from edustate.domain import (
    FacialFrame,
    FacialStream,
    Item,
    ItemBank,
    ResponseRecord,
    SessionRecord,
    UnderstandingLabel,
    empirical_accuracy,
    label_understanding,
    validate_session,
)
from edustate.errors import InsufficientDataError, SchemaError


def _resp(user, item, correct):
    return ResponseRecord(user, item, correct)


def _block(bits, user="u1", video="v01"):
    return [_resp(user, f"{video}-q{j + 1}", ok) for j, ok in enumerate(bits)]


@pytest.fixture()
def bank():
    items = [
        Item("v01", "lecture_video", "easy"),
        Item("v02", "lecture_video", "medium"),
    ]
    for vid in ("v01", "v02"):
        for j in range(1, 4):
            items.append(Item(f"{vid}-q{j}", "lecture_question", "medium", parent_video=vid))
    items.append(Item("pre-q01", "pretest_question", "easy"))
    return ItemBank(items)


class TestLabelUnderstanding:
    def test_all_correct(self):
        assert label_understanding(_block([True, True, True])) is True

    def test_two_of_three(self):
        assert label_understanding(_block([True, True, False])) is True

    def test_none_correct(self):
        assert label_understanding(_block([False, False, False])) is False

    def test_wrong_size(self):
        with pytest.raises(SchemaError):
            label_understanding(_block([True, True]))
        with pytest.raises(SchemaError):
            label_understanding(_block([True] * 4))

    def test_mixed_users(self):
        block = _block([True, True, True])
        block[1] = _resp("other", "v01-q2", True)
        with pytest.raises(SchemaError):
            label_understanding(block)

    def test_mixed_videos(self, bank):
        block = _block([True, True, True])
        block[2] = _resp("u1", "v02-q1", True)
        with pytest.raises(SchemaError):
            label_understanding(block, bank)

    def test_non_lecture_question(self, bank):
        block = _block([True, True, True])
        block[0] = _resp("u1", "pre-q01", True)
        with pytest.raises(SchemaError):
            label_understanding(block, bank)

    def test_monotone_in_corrections(self):
        # flipping any wrong answer to correct never turns true into false
        rng = np.random.default_rng(42)
        for _ in range(200):
            bits = list(rng.random(3) < 0.5)
            before = label_understanding(_block(bits))
            for j in range(3):
                if not bits[j]:
                    flipped = list(bits)
                    flipped[j] = True
                    after = label_understanding(_block(flipped))
                    assert not (before and not after)


class TestEmpiricalAccuracy:
    def test_half(self):
        recs = [_resp("u", "i", k < 4) for k in range(8)]
        assert empirical_accuracy(recs, "i") == 0.5

    def test_all_correct(self):
        recs = [_resp("u", "i", True) for _ in range(8)]
        assert empirical_accuracy(recs, "i") == 1.0

    def test_one_of_five(self):
        recs = [_resp("u", "i", k == 0) for k in range(5)]
        assert empirical_accuracy(recs, "i") == 0.2

    def test_no_responses(self):
        with pytest.raises(InsufficientDataError):
            empirical_accuracy([_resp("u", "other", True)], "i")

    def test_range_property(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            recs = [_resp("u", "i", bool(b)) for b in rng.random(rng.integers(1, 20)) < 0.3]
            assert 0.0 <= empirical_accuracy(recs, "i") <= 1.0


class TestFrameAndStream:
    def test_frame_needs_51_values(self):
        with pytest.raises(SchemaError):
            FacialFrame(0.0, tuple([0.5] * 52))

    def test_frame_range(self):
        with pytest.raises(SchemaError):
            FacialFrame(0.0, tuple([1.5] + [0.5] * 50))
        with pytest.raises(SchemaError):
            FacialFrame(-1.0, tuple([0.5] * 51))

    def test_stream_times_strictly_increasing(self):
        with pytest.raises(SchemaError):
            FacialStream("s", [0.0, 0.0, 0.1], np.full((3, 51), 0.5))
        # permissive path keeps it representable for validation reporting
        stream = FacialStream("s", [0.0, 0.0, 0.1], np.full((3, 51), 0.5), strict=False)
        assert len(stream) == 3

    def test_stream_rate_positive(self):
        with pytest.raises(SchemaError):
            FacialStream("s", [0.0], np.full((1, 51), 0.5), nominal_rate=0)

    def test_stream_immutable(self):
        stream = FacialStream("s", [0.0, 0.1], np.full((2, 51), 0.5))
        with pytest.raises(ValueError):
            stream.values[0, 0] = 1.0

    def test_from_frames_round_trip(self):
        frames = [FacialFrame(k / 30.0, tuple([0.25] * 51)) for k in range(4)]
        stream = FacialStream.from_frames("s", frames)
        assert stream.frame(2).t == pytest.approx(2 / 30.0)
        assert stream.width == 51


class TestItems:
    def test_lecture_question_needs_parent(self):
        with pytest.raises(SchemaError):
            Item("q", "lecture_question", "easy")

    def test_only_lecture_questions_carry_parent(self):
        with pytest.raises(SchemaError):
            Item("q", "pretest_question", "easy", parent_video="v01")

    def test_unknown_kind_and_level(self):
        with pytest.raises(SchemaError):
            Item("q", "mystery", "easy")
        with pytest.raises(SchemaError):
            Item("q", "pretest_question", "impossible")

    def test_bank_rejects_duplicates_and_dangling_parents(self):
        with pytest.raises(SchemaError):
            ItemBank([Item("a", "pretest_question", "easy")] * 2)
        with pytest.raises(SchemaError):
            ItemBank([Item("q1", "lecture_question", "easy", parent_video="nope")])

    def test_bank_order_is_lexicographic(self, bank):
        ids = [it.id for it in bank]
        assert ids == sorted(ids)

    def test_questions_for_video(self, bank):
        assert [it.id for it in bank.questions_for_video("v01")] == ["v01-q1", "v01-q2", "v01-q3"]


def _valid_session(bank):
    responses = _block([True, True, False], user="u1", video="v01")
    responses += _block([False, False, True], user="u1", video="v02")
    responses.append(_resp("u1", "pre-q01", True))
    labels = [UnderstandingLabel("u1", "v01", True), UnderstandingLabel("u1", "v02", False)]
    stream = FacialStream("v01", np.arange(40) / 30.0, np.full((40, 51), 0.5))
    return SessionRecord("u1", {"v01": stream, "v02": None}, responses, labels)


class TestValidateSession:
    def test_well_formed_session_is_clean(self, bank):
        assert validate_session(_valid_session(bank), bank) == []

    def test_fixture_sessions_are_clean(self, fixture_dataset):
        for session in fixture_dataset.sessions:
            assert validate_session(session, fixture_dataset.bank) == []

    def test_wide_frame_reported(self, bank):
        session = _valid_session(bank)
        wide = FacialStream("v01", np.arange(3) / 30.0, np.full((3, 52), 0.5))
        session = SessionRecord(session.user, {"v01": wide}, session.responses, session.labels)
        report = validate_session(session, bank)
        assert len(report) == 1
        assert report[0].code == "stream-width" and "52" in report[0].detail

    def test_label_mismatch_reported(self, bank):
        session = _valid_session(bank)
        labels = [UnderstandingLabel("u1", "v01", True), UnderstandingLabel("u1", "v02", True)]
        session = SessionRecord(session.user, session.streams, session.responses, labels)
        report = validate_session(session, bank)
        assert [v.code for v in report] == ["label-mismatch"]
        assert "v02" in report[0].where

    def test_unknown_item_and_underivable_label(self, bank):
        responses = [_resp("u1", "ghost", True)]
        labels = [UnderstandingLabel("u1", "v01", True)]
        session = SessionRecord("u1", {}, responses, labels)
        codes = {v.code for v in validate_session(session, bank)}
        assert codes == {"unknown-item", "label-underivable"}

    def test_out_of_range_and_non_monotone_streams(self, bank):
        session = _valid_session(bank)
        bad_vals = np.full((4, 51), 0.5)
        bad_vals[2, 7] = 1.5
        bad_range = FacialStream("v01", np.arange(4) / 30.0, bad_vals)
        bad_times = FacialStream("v02", [0.0, 0.2, 0.1], np.full((3, 51), 0.5), strict=False)
        session = SessionRecord(
            session.user, {"v01": bad_range, "v02": bad_times},
            session.responses, session.labels,
        )
        codes = sorted(v.code for v in validate_session(session, bank))
        assert codes == ["stream-range", "stream-times"]

    def test_duplicate_label_reported(self, bank):
        session = _valid_session(bank)
        labels = list(session.labels) + [UnderstandingLabel("u1", "v01", True)]
        session = SessionRecord(session.user, session.streams, session.responses, labels)
        assert any(v.code == "duplicate-label" for v in validate_session(session, bank))

    def test_labels_recomputable_from_responses(self, small_synth):
        sessions, bank, _truth = small_synth
        for session in sessions:
            for lab in session.labels:
                recomputed = label_understanding(
                    session.responses_for_video(bank, lab.lecture), bank
                )
                assert recomputed == lab.understood
