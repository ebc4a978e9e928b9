"""Leave-one-out evaluation protocol, EER thresholding, and report emission.

Each fold holds out one user: the fold trains on every other user's
per-lecture understanding outcomes (state-bearing samples) plus the pretest
and trial-phase question records of *all* users, including the held-out one
(state-masked anchoring, so the held-out user's ability is estimable without
touching their lecture data).  The decision threshold is selected on the
fold's training predictions at the point where false-positive and
false-negative rates are equal; test labels never influence it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from . import rasch
from .domain import KIND_PRETEST, KIND_LECTURE_VIDEO
from .errors import (
    DegenerateLabelsError,
    EdustateError,
    ProtocolError,
    SchemaError,
)
from .features import WindowSpec, extract_window, global_stats
from .models import DeepIrtModel, Sample, TrainConfig, predict_batch, train

VARIANT_NAMES = ("rasch", "deep-irt", "smart-mlp", "smart-tcn")
_STATE_BRANCH = {"rasch": None, "deep-irt": "none", "smart-mlp": "mlp", "smart-tcn": "tcn"}


@dataclass(frozen=True)
class TrainCell:
    user: str
    lecture: str
    understood: bool


@dataclass(frozen=True)
class TestCell:
    lecture: str
    truth: bool
    difficulty: str


@dataclass(frozen=True)
class Fold:
    held_out_user: str
    train_understanding: tuple  # TrainCell, other users only
    train_anchors: tuple        # ResponseRecord, all users incl. held-out
    test_cells: tuple           # TestCell, held-out user's lectures


@dataclass(frozen=True)
class LectureOutcome:
    lecture: str
    score: float
    predicted: bool
    truth: bool
    difficulty: str


@dataclass(frozen=True)
class FoldResult:
    held_out_user: str
    wl: int
    threshold: float
    outcomes: tuple
    accuracy: float
    auc: float


@dataclass(frozen=True)
class SweepReport:
    variant: str
    wl_values: tuple
    pool_stride: int
    base_seed: int
    folds: dict  # wl -> tuple of FoldResult

    def mean_accuracy(self, wl):
        results = self.folds[wl]
        return float(np.mean([fr.accuracy for fr in results]))

    def accuracies(self):
        return {wl: self.mean_accuracy(wl) for wl in self.wl_values}

    def difficulty_accuracy(self, wl):
        """Pooled accuracy per difficulty level at one window; absent levels omitted."""
        hits, totals = {}, {}
        for fr in self.folds[wl]:
            for oc in fr.outcomes:
                totals[oc.difficulty] = totals.get(oc.difficulty, 0) + 1
                hits[oc.difficulty] = hits.get(oc.difficulty, 0) + int(oc.predicted == oc.truth)
        return {lvl: (hits[lvl] / totals[lvl], totals[lvl]) for lvl in sorted(totals)}


def loocv_folds(sessions, bank):
    """One fold per user; raises ProtocolError when the protocol cannot run."""
    sessions = sorted(sessions, key=lambda s: s.user)
    if len(sessions) < 2:
        raise ProtocolError(f"leave-one-out needs >= 2 users, got {len(sessions)}")

    anchors_by_user = {}
    cells_by_user = {}
    for session in sessions:
        anchors = session.anchor_responses(bank)
        if not any(bank[r.item].kind == KIND_PRETEST for r in anchors):
            raise ProtocolError(f"user {session.user!r} has no pretest records to anchor on")
        anchors_by_user[session.user] = anchors
        cells_by_user[session.user] = tuple(
            sorted(session.labels, key=lambda lab: lab.lecture)
        )

    folds = []
    for session in sessions:
        user = session.user
        train_cells = tuple(
            TrainCell(other.user, lab.lecture, lab.understood)
            for other in sessions if other.user != user
            for lab in cells_by_user[other.user]
        )
        anchors = tuple(
            r for other in sessions for r in anchors_by_user[other.user]
        )
        test_cells = tuple(
            TestCell(lab.lecture, lab.understood, bank[lab.lecture].difficulty_level)
            for lab in cells_by_user[user]
        )
        folds.append(Fold(user, train_cells, anchors, test_cells))
    return folds


# ---------------------------------------------------------------------------
# EER threshold
# ---------------------------------------------------------------------------

def fpr_fnr(scores, labels, threshold):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    pred = scores >= threshold
    n_pos = int(labels.sum())
    n_neg = int((~labels).sum())
    fpr = float(np.sum(pred & ~labels)) / n_neg if n_neg else 0.0
    fnr = float(np.sum(~pred & labels)) / n_pos if n_pos else 0.0
    return fpr, fnr


def eer_candidates(scores):
    """Midpoints of sorted unique scores plus an all-positive and an
    all-negative endpoint (scores are probability-scale)."""
    uniq = np.unique(np.asarray(scores, dtype=np.float64))
    lo = uniq[0] / 2.0 if uniq[0] > 0.0 else uniq[0] - 1e-6
    hi = (uniq[-1] + 1.0) / 2.0 if uniq[-1] < 1.0 else uniq[-1] + 1e-6
    mids = (uniq[:-1] + uniq[1:]) / 2.0
    return np.concatenate([[lo], mids, [hi]])


def eer_threshold(scores, labels):
    """Brute-force threshold minimizing |FPR - FNR|; ties go to the smaller
    threshold.  Must be computed on training predictions only."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if labels.all() or not labels.any():
        raise DegenerateLabelsError("threshold selection needs both classes present")
    cands = eer_candidates(scores)
    pred = scores[None, :] >= cands[:, None]
    n_pos = labels.sum()
    n_neg = (~labels).sum()
    fpr = (pred & ~labels).sum(axis=1) / n_neg
    fnr = ((~pred) & labels).sum(axis=1) / n_pos
    gaps = np.abs(fpr - fnr)
    return float(cands[int(np.argmin(gaps))])  # argmin keeps the first (smallest) tie


def auc_score(scores, labels):
    """Rank-based AUC (diagnostic only); NaN when a class is absent."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    n_pos = int(labels.sum())
    n_neg = int((~labels).sum())
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

def _with_context(exc, context):
    raise type(exc)(f"{context}: {exc}") from exc


def _collect_features(sessions_by_user, pairs, spec, branch):
    """(user, lecture) -> feature array for every state-bearing cell."""
    feats = {}
    for user, lecture in sorted(pairs):
        session = sessions_by_user[user]
        stream = session.streams.get(lecture)
        if stream is None:
            raise SchemaError(
                f"user {user!r} has no stream for lecture {lecture!r} "
                "(required by a state-bearing variant)"
            )
        tensor = extract_window(stream, spec)
        feats[(user, lecture)] = global_stats(tensor).flat if branch == "mlp" else tensor.frames
    return feats


def _rasch_fold(fold):
    records = [(r.user, r.item, r.correct) for r in fold.train_anchors]
    records += [(c.user, c.lecture, c.understood) for c in fold.train_understanding]
    params = rasch.fit(records)
    train_scores = np.array([
        rasch.understanding_score(params, c.user, c.lecture) for c in fold.train_understanding
    ])
    train_labels = np.array([c.understood for c in fold.train_understanding], dtype=bool)
    test_scores = np.array([
        rasch.understanding_score(params, fold.held_out_user, c.lecture) for c in fold.test_cells
    ])
    return train_scores, train_labels, test_scores


def _standardize_features(fold, feats):
    """Per-fold standardization of global-feature vectors.

    The 408 window statistics span several orders of magnitude (rates of
    change near 1e-2, extremes near 1), which swamps a dense first layer;
    moments are fit on the training cells only and applied to every cell.
    """
    train_rows = np.stack([feats[(c.user, c.lecture)] for c in fold.train_understanding])
    mu = train_rows.mean(axis=0)
    sd = train_rows.std(axis=0)
    sd[sd == 0.0] = 1.0
    return {key: (vec - mu) / sd for key, vec in feats.items()}


def _deep_fold(fold, bank, branch, feats, seed, spec, epochs, lr, batch_size, tcn_readout):
    users = sorted({c.user for c in fold.train_understanding} | {fold.held_out_user}
                   | {r.user for r in fold.train_anchors})
    item_ids = [it.id for it in bank.lectures()]
    item_ids += sorted({r.item for r in fold.train_anchors})
    model = DeepIrtModel(users, item_ids, variant=branch, seed=seed, tcn_readout=tcn_readout)

    state_on = branch != "none"
    if branch == "mlp":
        feats = _standardize_features(fold, feats)
    train_samples = [
        Sample(c.user, c.lecture, c.understood,
               feats[(c.user, c.lecture)] if state_on else None, state_on)
        for c in fold.train_understanding
    ]
    train_samples += [
        Sample(r.user, r.item, r.correct, None, False) for r in fold.train_anchors
    ]
    config = TrainConfig(lr=lr, batch_size=batch_size, epochs=epochs, seed=seed, window=spec)
    train(model, train_samples, config)

    understanding_samples = train_samples[:len(fold.train_understanding)]
    train_scores = predict_batch(model, understanding_samples)
    train_labels = np.array([c.understood for c in fold.train_understanding], dtype=bool)
    test_samples = [
        Sample(fold.held_out_user, c.lecture, c.truth,
               feats[(fold.held_out_user, c.lecture)] if state_on else None, state_on)
        for c in fold.test_cells
    ]
    test_scores = predict_batch(model, test_samples)
    return train_scores, train_labels, test_scores


def run_sweep(sessions, bank, variant, wl_values, base_seed=0, pool_stride=1,
              epochs=200, lr=1e-3, batch_size=64, tcn_readout="last"):
    """Featurize, train, threshold, and score every (window, fold) pair.

    Deterministic: fold seeds are base_seed + fold index, features and fits
    depend only on the dataset and parameters.  The traditional baseline
    ignores windows entirely, so its per-window results are identical.
    """
    if variant not in VARIANT_NAMES:
        raise SchemaError(f"unknown variant {variant!r}, expected one of {VARIANT_NAMES}")
    branch = _STATE_BRANCH[variant]
    sessions_by_user = {s.user: s for s in sessions}
    folds = loocv_folds(sessions, bank)
    wl_values = tuple(sorted(set(int(w) for w in wl_values)))

    results = {}
    for wl in wl_values:
        spec = WindowSpec(wl, pool_stride)
        feats = None
        if branch in ("mlp", "tcn"):
            pairs = {(c.user, c.lecture) for f in folds for c in f.train_understanding}
            pairs |= {(f.held_out_user, c.lecture) for f in folds for c in f.test_cells}
            try:
                feats = _collect_features(sessions_by_user, pairs, spec, branch)
            except EdustateError as exc:
                _with_context(exc, f"wl={wl}")

        fold_results = []
        for f_idx, fold in enumerate(folds):
            try:
                if branch is None:
                    train_scores, train_labels, test_scores = _rasch_fold(fold)
                else:
                    train_scores, train_labels, test_scores = _deep_fold(
                        fold, bank, branch, feats, base_seed + f_idx, spec,
                        epochs, lr, batch_size, tcn_readout,
                    )
                threshold = eer_threshold(train_scores, train_labels)
            except EdustateError as exc:
                _with_context(exc, f"wl={wl}, fold {f_idx} (user {fold.held_out_user!r})")

            outcomes = tuple(
                LectureOutcome(c.lecture, float(s), bool(s >= threshold), c.truth, c.difficulty)
                for c, s in zip(fold.test_cells, test_scores)
            )
            acc = float(np.mean([oc.predicted == oc.truth for oc in outcomes]))
            auc = auc_score(test_scores, [c.truth for c in fold.test_cells])
            fold_results.append(FoldResult(
                fold.held_out_user, wl, float(threshold), outcomes, acc, auc,
            ))
        results[wl] = tuple(fold_results)

    return SweepReport(variant, wl_values, pool_stride, base_seed, results)


def difficulty_breakdown(fold_results, bank):
    """Accuracy restricted to test lectures of each difficulty level.

    Levels with no test lectures are absent from the result, not 0.
    """
    hits, totals = {}, {}
    for fr in fold_results:
        for oc in fr.outcomes:
            item = bank[oc.lecture]
            if item.kind != KIND_LECTURE_VIDEO:
                raise SchemaError(f"test cell {oc.lecture!r} is not a lecture video")
            lvl = item.difficulty_level
            totals[lvl] = totals.get(lvl, 0) + 1
            hits[lvl] = hits.get(lvl, 0) + int(oc.predicted == oc.truth)
    return {lvl: hits[lvl] / totals[lvl] for lvl in sorted(totals)}


# ---------------------------------------------------------------------------
# Report files
# ---------------------------------------------------------------------------

def _csv_float(x):
    if x is None or (isinstance(x, float) and not np.isfinite(x)):
        return ""
    return repr(float(x))


def summarize(reports, resolved_config=None):
    """JSON-ready summary of one or more sweep reports."""
    doc = {"config": resolved_config or {}, "variants": {}}
    for report in reports:
        by_wl = {}
        for wl in report.wl_values:
            folds = [
                {
                    "fold": k,
                    "held_out_user": fr.held_out_user,
                    "threshold": fr.threshold,
                    "accuracy": fr.accuracy,
                    "auc": None if not np.isfinite(fr.auc) else fr.auc,
                }
                for k, fr in enumerate(report.folds[wl])
            ]
            by_wl[str(wl)] = {
                "mean_accuracy": report.mean_accuracy(wl),
                "difficulty": {
                    lvl: {"accuracy": acc, "n_lectures": n}
                    for lvl, (acc, n) in report.difficulty_accuracy(wl).items()
                },
                "folds": folds,
            }
        doc["variants"][report.variant] = {
            "base_seed": report.base_seed,
            "pool_stride": report.pool_stride,
            "wl": by_wl,
        }
    return doc


def write_reports(reports, out_dir, resolved_config=None):
    """Write accuracy_vs_window.csv, difficulty_table.csv, and summary.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    lines = ["variant,wl,fold,held_out_user,threshold,accuracy,auc"]
    for report in reports:
        for wl in report.wl_values:
            for k, fr in enumerate(report.folds[wl]):
                lines.append(",".join([
                    report.variant, str(wl), str(k), fr.held_out_user,
                    _csv_float(fr.threshold), _csv_float(fr.accuracy), _csv_float(fr.auc),
                ]))
            aucs = [fr.auc for fr in report.folds[wl] if np.isfinite(fr.auc)]
            lines.append(",".join([
                report.variant, str(wl), "mean", "", "",
                _csv_float(report.mean_accuracy(wl)),
                _csv_float(float(np.mean(aucs)) if aucs else None),
            ]))
    (out / "accuracy_vs_window.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    lines = ["variant,wl,level,n_lectures,accuracy"]
    for report in reports:
        for wl in report.wl_values:
            for lvl, (acc, n) in report.difficulty_accuracy(wl).items():
                lines.append(",".join([
                    report.variant, str(wl), lvl, str(n), _csv_float(acc),
                ]))
    (out / "difficulty_table.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    summary = summarize(reports, resolved_config)
    (out / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return summary
