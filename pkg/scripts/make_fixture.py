#!/usr/bin/env python3
"""Regenerate the small deterministic dataset under tests/data/fixture-2user.

The fixture has 2 users and 21 items: 10 pretest questions, 3 trial
questions, 2 lecture videos, and 6 lecture questions.  Streams are 2-second
61-frame sinusoids so files stay reviewable.
"""

from pathlib import Path

import numpy as np

from edustate.dataio import write_dataset
from edustate.domain import (
    FacialStream,
    Item,
    ItemBank,
    ResponseRecord,
    SessionRecord,
    UnderstandingLabel,
)

OUT = Path(__file__).resolve().parent.parent / "tests" / "data" / "fixture-2user"


def make_stream(segment_id, user_phase):
    n = 61
    t = np.arange(n) / 30.0
    c = np.arange(51)
    vals = 0.5 + 0.3 * np.sin(0.7 * t[:, None] + 0.3 * c[None, :] + user_phase)
    return FacialStream(segment_id, t, vals.astype(np.float32))


def build():
    items = []
    pretest_levels = ["easy"] * 3 + ["medium"] * 4 + ["hard"] * 3
    for j, level in enumerate(pretest_levels, start=1):
        items.append(Item(f"pre-q{j:02d}", "pretest_question", level, concept_tags={"pretest"}))
    for j in range(1, 4):
        items.append(Item(f"trial-q{j}", "trial_question", "medium", concept_tags={"trial"}))
    items.append(Item("v01", "lecture_video", "easy", concept_tags={"grammar"}))
    items.append(Item("v02", "lecture_video", "medium", concept_tags={"vocabulary"}))
    for vid, levels in (("v01", ["easy", "easy", "medium"]),
                        ("v02", ["medium", "medium", "medium"])):
        for j, level in enumerate(levels, start=1):
            items.append(Item(f"{vid}-q{j}", "lecture_question", level,
                              concept_tags={"grammar"}, parent_video=vid))
    bank = ItemBank(items)
    assert len(bank) == 21, len(bank)

    def responses(user, pretest_bits, trial_bits, v1_bits, v2_bits, rt):
        out = []
        for j, ok in enumerate(trial_bits, start=1):
            out.append(ResponseRecord(user, f"trial-q{j}", ok))
        for j, ok in enumerate(pretest_bits, start=1):
            out.append(ResponseRecord(user, f"pre-q{j:02d}", ok, response_time=rt + j))
        for j, ok in enumerate(v1_bits, start=1):
            out.append(ResponseRecord(user, f"v01-q{j}", ok))
        for j, ok in enumerate(v2_bits, start=1):
            out.append(ResponseRecord(user, f"v02-q{j}", ok))
        return tuple(out)

    alice = SessionRecord(
        "alice",
        {"v01": make_stream("v01", 0.0), "v02": make_stream("v02", 1.0), "v01:qa": None},
        responses("alice",
                  [True, True, True, True, False, True, False, False, True, False],
                  [True, True, False],
                  [True, True, False],   # v01 understood
                  [False, True, False],  # v02 not understood
                  rt=10.0),
        (UnderstandingLabel("alice", "v01", True),
         UnderstandingLabel("alice", "v02", False)),
    )
    bob = SessionRecord(
        "bob",
        {"v01": make_stream("v01", 2.0), "v02": make_stream("v02", 3.0)},
        responses("bob",
                  [True, False, True, False, True, False, True, False, False, False],
                  [False, True, True],
                  [False, False, True],  # v01 not understood
                  [True, True, True],    # v02 understood
                  rt=20.0),
        (UnderstandingLabel("bob", "v01", False),
         UnderstandingLabel("bob", "v02", True)),
    )
    return [alice, bob], bank


def main():
    sessions, bank = build()
    manifest = write_dataset(sessions, bank, OUT, provenance="hand-built 2-user fixture",
                             force=True)
    print(f"fixture written to {manifest}")


if __name__ == "__main__":
    main()
