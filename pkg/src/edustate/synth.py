"""Seed-deterministic generative oracle.

Samples a latent population (abilities, difficulties, per-lecture states),
draws understanding outcomes from sigma(theta - (b + phi)), emits question
responses consistent with the majority labeling rule, and synthesizes facial
streams whose window statistics encode the latent state.  Every estimator in
the package can therefore be verified at desk scale against known truth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import kernels
from .domain import (
    EXPRESSION_CHANNELS,
    KIND_LECTURE_Q,
    KIND_LECTURE_VIDEO,
    KIND_PRETEST,
    KIND_TRIAL,
    FacialStream,
    Item,
    ItemBank,
    ResponseRecord,
    SessionRecord,
    UnderstandingLabel,
)
from .errors import ConfigError
from .features import GRID_RATE

LEVEL_VALUES = {"easy": -1.0, "medium": 0.0, "hard": 1.0}

# question plan per lecture difficulty
VIDEO_QUESTION_PLAN = {
    "easy": ("easy", "easy", "medium"),
    "medium": ("medium", "medium", "medium"),
    "hard": ("hard", "hard", "medium"),
}
PRETEST_PLAN = ("easy",) * 3 + ("medium",) * 4 + ("hard",) * 3
N_TRIAL_QUESTIONS = 5

# stream synthesis constants
WALK_REVERSION = 0.003
WALK_NOISE_SD = 0.015
STATE_MEAN_SHIFT = 0.2          # baseline offset per unit of alpha * phi
N_STATE_MEAN_CHANNELS = 10      # channels 0..9 carry the mean shift
EVENT_CHANNEL = 10
EVENT_BASE_RATE = 2.0           # pulses per minute at alpha * phi = 0
EVENT_MIN_RATE = 0.2
EVENT_FRAMES = 15               # pulse length (half a second at 30 Hz)

MAX_CONSISTENCY_ATTEMPTS = 256


@dataclass(frozen=True)
class SynthConfig:
    n_users: int = 10
    n_lectures: int = 10
    ability_sd: float = 1.0
    state_sd: float = 0.5
    signal_strength: float = 1.0  # alpha: how strongly streams encode phi
    difficulty_scale: float = 1.0
    stream_minutes: float = 8.0
    generate_streams: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_users < 1 or self.n_lectures < 1:
            raise ConfigError("need at least one user and one lecture")
        if self.ability_sd < 0 or self.state_sd < 0 or self.signal_strength < 0:
            raise ConfigError("ability_sd, state_sd and signal_strength must be >= 0")
        if self.difficulty_scale < 0:
            raise ConfigError("difficulty_scale must be >= 0")
        if self.generate_streams and self.stream_minutes < 1:
            raise ConfigError("stream_minutes must be >= 1")


@dataclass(frozen=True)
class SynthTruth:
    """Latents and outcomes behind a generated dataset."""

    theta: dict            # user -> ability
    b: dict                # item -> difficulty (questions and lecture videos)
    phi: dict              # (user, lecture) -> state
    probability: dict      # (user, lecture) -> sigma(theta - (b + phi))
    understood: dict       # (user, lecture) -> drawn outcome
    n_forced: int          # cells where response consistency had to be forced

    def cells(self):
        return sorted(self.probability)


def _lecture_levels(n_lectures):
    """Difficulty mix over lectures, mirroring the 3:4:3 pretest ratio."""
    if n_lectures == 1:
        return ["medium"]
    if n_lectures == 2:
        return ["easy", "medium"]
    easy = round(0.3 * n_lectures)
    hard = round(0.3 * n_lectures)
    medium = n_lectures - easy - hard
    return ["easy"] * easy + ["medium"] * medium + ["hard"] * hard


def build_item_bank(config):
    items = []
    for j, level in enumerate(PRETEST_PLAN, start=1):
        items.append(Item(f"pre-q{j:02d}", KIND_PRETEST, level, concept_tags={"pretest"}))
    for j in range(1, N_TRIAL_QUESTIONS + 1):
        items.append(Item(f"trial-q{j}", KIND_TRIAL, "medium", concept_tags={"trial"}))
    levels = _lecture_levels(config.n_lectures)
    for k, level in enumerate(levels, start=1):
        vid = f"v{k:02d}"
        items.append(Item(vid, KIND_LECTURE_VIDEO, level, concept_tags={"lecture"}))
        for j, q_level in enumerate(VIDEO_QUESTION_PLAN[level], start=1):
            items.append(Item(
                f"{vid}-q{j}", KIND_LECTURE_Q, q_level,
                concept_tags={"lecture"}, parent_video=vid,
            ))
    return ItemBank(items)


def true_difficulties(bank, scale):
    return {it.id: LEVEL_VALUES[it.difficulty_level] * scale for it in bank}


def draw_outcomes(probabilities, rng):
    """One Bernoulli draw per probability (the generator's outcome mechanism)."""
    p = np.asarray(probabilities, dtype=np.float64)
    return rng.random(p.shape) < p


def _consistent_block(rng, p_questions, target):
    """Three question draws whose majority matches the drawn outcome.

    Honest rejection sampling first; if the target majority never appears in
    MAX_CONSISTENCY_ATTEMPTS attempts, the most marginal responses are forced
    so stored labels always reproduce the drawn outcome.
    """
    p = np.asarray(p_questions, dtype=np.float64)
    for _ in range(MAX_CONSISTENCY_ATTEMPTS):
        draws = rng.random(3) < p
        if (int(draws.sum()) >= 2) == target:
            return draws, False
    draws = rng.random(3) < p
    order = np.argsort(p)  # ascending
    if target:
        draws[order[-1]] = True
        draws[order[-2]] = True
    else:
        draws[order[0]] = False
        draws[order[1]] = False
    return draws, True


def generate_stream(phi, minutes=8.0, alpha=0.0, seed=0, segment_id="synthetic"):
    """Synthesize one 51-channel facial stream at 30 Hz.

    Channels follow clamped mean-reverting walks around fixed baselines;
    channels 0..9 get their baseline shifted by alpha * phi * 0.2, and
    channel 10 carries 0->1 pulses at a rate of (2 + alpha * phi) per minute
    (floored at 0.2/min).  Window means and rates are therefore informative
    about phi exactly when alpha > 0.
    """
    if minutes < 1:
        raise ConfigError(f"stream needs at least 1 minute, got {minutes}")
    rng = np.random.default_rng(seed)
    n = int(round(minutes * 60 * GRID_RATE))
    c = EXPRESSION_CHANNELS

    # centered baselines keep the shifted channels inside [0, 1] at alpha*phi
    # swings of +-0.4, so the mean signal is not compressed by the clamp
    baseline = 0.45 + 0.002 * np.arange(c)
    effective = baseline.copy()
    effective[:N_STATE_MEAN_CHANNELS] += alpha * phi * STATE_MEAN_SHIFT
    np.clip(effective, 0.02, 0.98, out=effective)

    start = np.clip(effective + rng.normal(0.0, 0.05, c), 0.0, 1.0)
    noise = rng.normal(0.0, WALK_NOISE_SD, (n, c))
    vals = kernels.mean_reverting_walk(start, effective, WALK_REVERSION, noise)

    rate = max(EVENT_BASE_RATE + alpha * phi, EVENT_MIN_RATE)
    n_events = int(rng.poisson(rate * minutes))
    if n_events:
        starts = np.sort(rng.integers(0, max(n - EVENT_FRAMES, 1), n_events))
        for s in starts:
            vals[s:s + EVENT_FRAMES, EVENT_CHANNEL] = 1.0

    times = np.arange(n, dtype=np.float64) / GRID_RATE
    return FacialStream(segment_id, times, vals.astype(np.float32))


def generate(config):
    """Generate (sessions, bank, truth) for a full protocol-shaped dataset."""
    bank = build_item_bank(config)
    b_true = true_difficulties(bank, config.difficulty_scale)
    lectures = [it.id for it in bank.lectures()]
    anchors = [it for it in bank if it.kind in (KIND_PRETEST, KIND_TRIAL)]
    users = [f"user{k:03d}" for k in range(config.n_users)]

    master = np.random.default_rng(config.seed)
    theta = {u: float(v) for u, v in zip(users, master.normal(0.0, config.ability_sd, len(users)))}

    phi_map, prob_map, outcome_map = {}, {}, {}
    sessions = []
    n_forced = 0
    for uidx, user in enumerate(users):
        rng_u = np.random.default_rng((config.seed, uidx, 1))
        th = theta[user]

        phi_vec = rng_u.normal(0.0, config.state_sd, len(lectures))
        p_vec = expit(th - (np.array([b_true[v] for v in lectures]) + phi_vec))
        u_vec = draw_outcomes(p_vec, rng_u)

        responses = []
        for it in anchors:
            p = float(expit(th - b_true[it.id]))
            responses.append(ResponseRecord(user, it.id, bool(rng_u.random() < p)))

        labels = []
        streams = {}
        for lidx, vid in enumerate(lectures):
            phi = float(phi_vec[lidx])
            target = bool(u_vec[lidx])
            phi_map[(user, vid)] = phi
            prob_map[(user, vid)] = float(p_vec[lidx])
            outcome_map[(user, vid)] = target

            q_items = bank.questions_for_video(vid)
            p_q = expit(th - (np.array([b_true[q.id] for q in q_items]) + phi))
            draws, forced = _consistent_block(rng_u, p_q, target)
            n_forced += int(forced)
            for q, ok in zip(q_items, draws):
                responses.append(ResponseRecord(user, q.id, bool(ok)))
            labels.append(UnderstandingLabel(user, vid, target))

            if config.generate_streams:
                streams[vid] = generate_stream(
                    phi, minutes=config.stream_minutes, alpha=config.signal_strength,
                    seed=(config.seed, uidx, 2, lidx), segment_id=vid,
                )
            else:
                streams[vid] = None

        sessions.append(SessionRecord(user, streams, tuple(responses), tuple(labels)))

    truth = SynthTruth(
        theta=theta, b=b_true, phi=phi_map,
        probability=prob_map, understood=outcome_map, n_forced=n_forced,
    )
    return sessions, bank, truth


def bayes_accuracy(truth, threshold=0.5, n_resamples=100_000, seed=2024):
    """Monte-Carlo accuracy of the ideal predictor 1[p >= threshold].

    Outcomes are resampled with latents fixed, so this upper-bounds the
    expected accuracy of any learned model on the same truth.
    """
    cells = truth.cells()
    p = np.array([truth.probability[c] for c in cells])
    pred = p >= threshold
    rng = np.random.default_rng(seed)
    hits = 0
    block = max(1, min(n_resamples, 20_000_000 // max(len(cells), 1)))
    done = 0
    while done < n_resamples:
        m = min(block, n_resamples - done)
        draws = rng.random((m, len(cells))) < p
        hits += int(np.sum(draws == pred))
        done += m
    return hits / (n_resamples * len(cells))
