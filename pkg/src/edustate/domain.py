"""Core domain types for learning-session data, plus the labeling rules that
turn raw question responses into per-lecture ground truth."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from types import MappingProxyType

import numpy as np

from .errors import InsufficientDataError, SchemaError

EXPRESSION_CHANNELS = 51
NOMINAL_RATE_HZ = 30.0

KIND_PRETEST = "pretest_question"
KIND_TRIAL = "trial_question"
KIND_LECTURE_Q = "lecture_question"
KIND_LECTURE_VIDEO = "lecture_video"
QUESTION_KINDS = frozenset({KIND_PRETEST, KIND_TRIAL, KIND_LECTURE_Q})
ITEM_KINDS = QUESTION_KINDS | {KIND_LECTURE_VIDEO}
ANCHOR_KINDS = frozenset({KIND_PRETEST, KIND_TRIAL})

DIFFICULTY_LEVELS = ("easy", "medium", "hard")


@dataclass(frozen=True)
class FacialFrame:
    """One expression sample: seconds since segment start and 51 intensities in [0, 1]."""

    t: float
    values: tuple

    def __post_init__(self):
        if not (math.isfinite(self.t) and self.t >= 0.0):
            raise SchemaError(f"frame time must be finite and >= 0, got {self.t}")
        if len(self.values) != EXPRESSION_CHANNELS:
            raise SchemaError(
                f"frame needs exactly {EXPRESSION_CHANNELS} values, got {len(self.values)}"
            )
        if any(not (0.0 <= v <= 1.0) for v in self.values):
            raise SchemaError("frame intensities must lie in [0, 1]")


class FacialStream:
    """Timestamped expression sequence for one recorded segment.

    Frames are stored as arrays (``times``: (T,), ``values``: (T, width)) for
    speed.  Construction enforces the stream-level invariants (finite,
    strictly increasing times; positive nominal rate).  Channel width and the
    [0, 1] value range are dataset-level invariants checked by
    ``validate_session`` so that malformed imports remain representable and
    reportable; pass ``strict=False`` to skip the time checks for the same
    reason.
    """

    __slots__ = ("segment_id", "times", "values", "nominal_rate")

    def __init__(self, segment_id, times, values, nominal_rate=NOMINAL_RATE_HZ, strict=True):
        times = np.asarray(times, dtype=np.float64)
        values = np.asarray(values)
        if times.ndim != 1 or values.ndim != 2 or values.shape[0] != times.shape[0]:
            raise SchemaError(
                f"stream {segment_id!r}: times must be (T,) and values (T, width), "
                f"got {times.shape} / {values.shape}"
            )
        if strict and times.size:
            if not np.all(np.isfinite(times)) or times[0] < 0.0:
                raise SchemaError(f"stream {segment_id!r}: times must be finite and >= 0")
            if times.size > 1 and not np.all(np.diff(times) > 0.0):
                raise SchemaError(f"stream {segment_id!r}: times must be strictly increasing")
        if not nominal_rate > 0:
            raise SchemaError(f"stream {segment_id!r}: nominal rate must be > 0")
        # freeze views rather than the caller's arrays
        times = times.view()
        times.setflags(write=False)
        values = values.view()
        values.setflags(write=False)
        self.segment_id = segment_id
        self.times = times
        self.values = values
        self.nominal_rate = float(nominal_rate)

    def __len__(self):
        return int(self.times.size)

    @property
    def width(self):
        return int(self.values.shape[1])

    @property
    def duration(self):
        """Seconds from segment start to the last frame (0 for empty streams)."""
        return float(self.times[-1]) if self.times.size else 0.0

    def frame(self, i):
        return FacialFrame(float(self.times[i]), tuple(float(v) for v in self.values[i]))

    @classmethod
    def from_frames(cls, segment_id, frames, nominal_rate=NOMINAL_RATE_HZ):
        frames = list(frames)
        times = np.array([f.t for f in frames], dtype=np.float64)
        values = np.array([f.values for f in frames], dtype=np.float64)
        if values.size == 0:
            values = values.reshape(0, EXPRESSION_CHANNELS)
        return cls(segment_id, times, values, nominal_rate)

    def __eq__(self, other):
        if not isinstance(other, FacialStream):
            return NotImplemented
        return (
            self.segment_id == other.segment_id
            and self.nominal_rate == other.nominal_rate
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.values, other.values)
        )

    def __repr__(self):
        return (
            f"FacialStream({self.segment_id!r}, frames={len(self)}, "
            f"width={self.values.shape[1] if self.values.size else 0}, "
            f"rate={self.nominal_rate:g})"
        )


@dataclass(frozen=True)
class Item:
    """A pretest/trial/lecture question or a lecture video."""

    id: str
    kind: str
    difficulty_level: str
    concept_tags: frozenset = frozenset()
    parent_video: str | None = None
    meta: tuple = ()

    def __post_init__(self):
        if self.kind not in ITEM_KINDS:
            raise SchemaError(f"item {self.id!r}: unknown kind {self.kind!r}")
        if self.difficulty_level not in DIFFICULTY_LEVELS:
            raise SchemaError(
                f"item {self.id!r}: unknown difficulty {self.difficulty_level!r}"
            )
        if self.kind == KIND_LECTURE_Q and not self.parent_video:
            raise SchemaError(f"item {self.id!r}: lecture questions need a parent video")
        if self.kind != KIND_LECTURE_Q and self.parent_video:
            raise SchemaError(f"item {self.id!r}: only lecture questions carry a parent video")
        object.__setattr__(self, "concept_tags", frozenset(self.concept_tags))
        object.__setattr__(self, "meta", tuple(self.meta))

    @property
    def is_question(self):
        return self.kind in QUESTION_KINDS


class ItemBank:
    """Immutable id-indexed item collection.

    Iteration and one-hot positions follow lexicographic id order, fixed at
    construction, so every index map derived from a bank is deterministic.
    """

    def __init__(self, items):
        ordered = sorted(items, key=lambda it: it.id)
        by_id = {}
        for it in ordered:
            if it.id in by_id:
                raise SchemaError(f"duplicate item id {it.id!r}")
            by_id[it.id] = it
        for it in ordered:
            if it.parent_video is not None:
                parent = by_id.get(it.parent_video)
                if parent is None or parent.kind != KIND_LECTURE_VIDEO:
                    raise SchemaError(
                        f"item {it.id!r}: parent video {it.parent_video!r} missing or not a lecture video"
                    )
        self._by_id = by_id
        self.items = tuple(ordered)

    def __contains__(self, item_id):
        return item_id in self._by_id

    def __getitem__(self, item_id):
        try:
            return self._by_id[item_id]
        except KeyError:
            raise KeyError(f"unknown item {item_id!r}") from None

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def of_kind(self, *kinds):
        return tuple(it for it in self.items if it.kind in kinds)

    def questions(self):
        return self.of_kind(*QUESTION_KINDS)

    def lectures(self):
        return self.of_kind(KIND_LECTURE_VIDEO)

    def questions_for_video(self, video_id):
        return tuple(
            it for it in self.items
            if it.kind == KIND_LECTURE_Q and it.parent_video == video_id
        )

    def __eq__(self, other):
        if not isinstance(other, ItemBank):
            return NotImplemented
        return self.items == other.items


@dataclass(frozen=True)
class ResponseRecord:
    """One answered question."""

    user: str
    item: str
    correct: bool
    response_time: float | None = None
    meta: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "correct", bool(self.correct))
        object.__setattr__(self, "meta", tuple(self.meta))


@dataclass(frozen=True)
class UnderstandingLabel:
    """Per-(user, lecture) binary ground truth."""

    user: str
    lecture: str
    understood: bool

    def __post_init__(self):
        object.__setattr__(self, "understood", bool(self.understood))


@dataclass(frozen=True)
class SessionRecord:
    """Everything recorded for one user's learning session.

    ``streams`` maps segment id -> FacialStream, with ``None`` as the explicit
    marker for a segment that was referenced but not captured.
    """

    user: str
    streams: MappingProxyType = field(default_factory=dict)
    responses: tuple = ()
    labels: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "streams", MappingProxyType(dict(self.streams)))
        object.__setattr__(self, "responses", tuple(self.responses))
        object.__setattr__(self, "labels", tuple(self.labels))

    def responses_for_video(self, bank, video_id):
        return tuple(
            r for r in self.responses
            if r.item in bank
            and bank[r.item].kind == KIND_LECTURE_Q
            and bank[r.item].parent_video == video_id
        )

    def anchor_responses(self, bank):
        """Pretest and trial-phase records (the leave-one-out anchoring set)."""
        return tuple(
            r for r in self.responses
            if r.item in bank and bank[r.item].kind in ANCHOR_KINDS
        )


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def label_understanding(responses_for_video, bank=None):
    """Majority rule: understood iff at least 2 of the 3 post-video answers are correct.

    When an ItemBank is supplied, also checks that all three responses are
    lecture questions under a single parent video.
    """
    recs = list(responses_for_video)
    if len(recs) != 3:
        raise SchemaError(f"understanding needs exactly 3 responses, got {len(recs)}")
    if len({r.user for r in recs}) != 1:
        raise SchemaError("understanding responses span multiple users")
    if bank is not None:
        parents = set()
        for r in recs:
            item = bank[r.item]
            if item.kind != KIND_LECTURE_Q:
                raise SchemaError(f"item {r.item!r} is not a lecture question")
            parents.add(item.parent_video)
        if len(parents) != 1:
            raise SchemaError(f"understanding responses span multiple videos: {sorted(parents)}")
    return sum(r.correct for r in recs) >= 2


def empirical_accuracy(responses, item_id):
    """Fraction of correct responses recorded for one item."""
    hits = [r.correct for r in responses if r.item == item_id]
    if not hits:
        raise InsufficientDataError(f"no responses for item {item_id!r}")
    return sum(hits) / len(hits)


@dataclass(frozen=True)
class Violation:
    code: str
    where: str
    detail: str

    def __str__(self):
        return f"[{self.code}] {self.where}: {self.detail}"


def _check_stream(user, seg_id, stream, report):
    if stream.width != EXPRESSION_CHANNELS:
        report.append(Violation(
            "stream-width", f"{user}/{seg_id}",
            f"frames carry {stream.width} values, expected {EXPRESSION_CHANNELS}",
        ))
    t = stream.times
    if t.size and (not np.all(np.isfinite(t)) or t[0] < 0.0):
        report.append(Violation(
            "stream-times", f"{user}/{seg_id}", "times must be finite and >= 0",
        ))
    elif t.size > 1 and not np.all(np.diff(t) > 0.0):
        bad = int(np.argmax(np.diff(t) <= 0.0))
        report.append(Violation(
            "stream-times", f"{user}/{seg_id}",
            f"non-monotone timestamp at frame {bad + 1}",
        ))
    v = stream.values
    if v.size:
        finite = np.isfinite(v)
        if not finite.all():
            i = int(np.argwhere(~finite)[0][0])
            report.append(Violation(
                "stream-range", f"{user}/{seg_id}", f"non-finite value at frame {i}",
            ))
        else:
            out = (v < 0.0) | (v > 1.0)
            if out.any():
                i = int(np.argwhere(out)[0][0])
                report.append(Violation(
                    "stream-range", f"{user}/{seg_id}",
                    f"{int(out.sum())} values outside [0, 1], first at frame {i}",
                ))


def validate_session(session, bank):
    """Collect every invariant violation in one session; an empty list means valid.

    Violations are report entries, never exceptions: ingest paths use this to
    surface all problems at once.
    """
    report = []
    user = session.user

    for r in session.responses:
        if r.item not in bank:
            report.append(Violation("unknown-item", user, f"response references {r.item!r}"))
        elif not bank[r.item].is_question:
            report.append(Violation(
                "non-question-response", user,
                f"response references {r.item!r} of kind {bank[r.item].kind!r}",
            ))
        if r.user != user:
            report.append(Violation(
                "foreign-response", user, f"response carries user {r.user!r}",
            ))

    seen = set()
    for lab in session.labels:
        if (lab.user, lab.lecture) in seen:
            report.append(Violation("duplicate-label", user, f"second label for {lab.lecture!r}"))
            continue
        seen.add((lab.user, lab.lecture))
        if lab.lecture not in bank or bank[lab.lecture].kind != KIND_LECTURE_VIDEO:
            report.append(Violation(
                "unknown-lecture", user, f"label references {lab.lecture!r}",
            ))
            continue
        recs = session.responses_for_video(bank, lab.lecture)
        if len(recs) != 3:
            report.append(Violation(
                "label-underivable", f"{user}/{lab.lecture}",
                f"{len(recs)} lecture-question responses, need 3",
            ))
        elif label_understanding(recs, bank) != lab.understood:
            report.append(Violation(
                "label-mismatch", f"{user}/{lab.lecture}",
                f"stored understood={lab.understood} contradicts responses",
            ))

    for seg_id in sorted(session.streams):
        stream = session.streams[seg_id]
        if stream is None:
            continue  # explicitly marked missing
        _check_stream(user, seg_id, stream, report)

    return report
