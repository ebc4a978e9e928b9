"""Traditional one-parameter (Rasch) baseline.

Difficulties are initialized from empirical accuracies through a sign-inverted
probit transform, then abilities and difficulties are refined by alternating
per-user / per-item Newton-Raphson maximum likelihood until convergence.
The likelihood is translation invariant in (theta - b), so after every sweep
both parameter blocks are shifted together to re-anchor mean ability at zero
(predictions are unchanged by the shift) and clamped to [-4, 4].
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit
from scipy.stats import norm

from .errors import InsufficientDataError, SchemaError

logger = logging.getLogger(__name__)

PARAM_CLAMP = 4.0
ACCURACY_CLAMP = 0.01


@dataclass(frozen=True)
class RaschParams:
    """Fitted abilities (per user) and difficulties (per item).

    ``history`` records (log_likelihood, n_clamped) per outer sweep.
    """

    theta: dict
    b: dict
    history: tuple = field(default=(), compare=False, repr=False)

    def to_json(self):
        doc = {
            "theta": {u: self.theta[u] for u in sorted(self.theta)},
            "b": {i: self.b[i] for i in sorted(self.b)},
        }
        return json.dumps(doc, sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        return cls(theta=dict(doc["theta"]), b=dict(doc["b"]))


def init_difficulties(accuracies):
    """b = -probit(accuracy), with accuracies clamped to [0.01, 0.99] first."""
    out = {}
    for item_id in sorted(accuracies):
        p = float(accuracies[item_id])
        if not math.isfinite(p):
            raise SchemaError(f"accuracy for item {item_id!r} is not finite")
        p = min(max(p, ACCURACY_CLAMP), 1.0 - ACCURACY_CLAMP)
        out[item_id] = float(-norm.ppf(p))
    return out


def _log_lik(z, y):
    # y*log(sigma(z)) + (1-y)*log(1-sigma(z)), stable at large |z|
    return float(np.sum(y * -np.logaddexp(0.0, -z) + (1.0 - y) * -np.logaddexp(0.0, z)))


def _newton_block(own, other_of_r, own_of_r, y, sign, n_own, max_steps=25, tol=1e-9):
    """Per-entity Newton MLE for one parameter block, the other held fixed.

    ``sign`` is +1 when solving for theta (z = own - other) and -1 for b
    (z = other - own).  Steps that would lower an entity's likelihood are
    halved; estimates are clamped to +-PARAM_CLAMP.
    """
    own = own.copy()

    def z_of(vec):
        return sign * (vec[own_of_r] - other_of_r)

    def ll_per_entity(vec):
        z = z_of(vec)
        ll = y * -np.logaddexp(0.0, -z) + (1.0 - y) * -np.logaddexp(0.0, z)
        return np.bincount(own_of_r, weights=ll, minlength=n_own)

    ll_old = ll_per_entity(own)
    for _ in range(max_steps):
        z = z_of(own)
        p = expit(z)
        grad = sign * np.bincount(own_of_r, weights=y - p, minlength=n_own)
        hess = np.bincount(own_of_r, weights=p * (1.0 - p), minlength=n_own)
        step = grad / np.maximum(hess, 1e-10)
        # step halving where the likelihood would decrease
        for _half in range(30):
            cand = np.clip(own + step, -PARAM_CLAMP, PARAM_CLAMP)
            ll_new = ll_per_entity(cand)
            worse = ll_new < ll_old - 1e-12
            if not worse.any():
                break
            step = np.where(worse, step * 0.5, step)
        moved = np.abs(cand - own).max() if n_own else 0.0
        own = cand
        ll_old = ll_new
        if moved < tol:
            break
    return own


def fit(records, max_iter=100, tol=1e-4, users=None, items=None):
    """Alternating maximum-likelihood fit of a Rasch parameter table.

    ``records`` is any iterable of objects with user/item/correct attributes
    (or (user, item, correct) triples).  Deterministic: identical inputs give
    bit-identical parameters.
    """
    triples = []
    for r in records:
        if hasattr(r, "user"):
            triples.append((r.user, r.item, bool(r.correct)))
        else:
            u, i, c = r
            triples.append((u, i, bool(c)))
    if not triples:
        raise InsufficientDataError("no responses to fit")

    user_ids = sorted({t[0] for t in triples} | set(users or ()))
    item_ids = sorted({t[1] for t in triples} | set(items or ()))
    u_pos = {u: k for k, u in enumerate(user_ids)}
    i_pos = {i: k for k, i in enumerate(item_ids)}

    u_of_r = np.array([u_pos[t[0]] for t in triples], dtype=np.int64)
    i_of_r = np.array([i_pos[t[1]] for t in triples], dtype=np.int64)
    y = np.array([t[2] for t in triples], dtype=np.float64)

    u_counts = np.bincount(u_of_r, minlength=len(user_ids))
    i_counts = np.bincount(i_of_r, minlength=len(item_ids))
    if (u_counts == 0).any():
        missing = [user_ids[k] for k in np.flatnonzero(u_counts == 0)]
        raise InsufficientDataError(f"users without responses: {missing}")
    if (i_counts == 0).any():
        missing = [item_ids[k] for k in np.flatnonzero(i_counts == 0)]
        raise InsufficientDataError(f"items without responses: {missing}")

    acc = np.bincount(i_of_r, weights=y, minlength=len(item_ids)) / i_counts
    b = np.array([-norm.ppf(min(max(p, ACCURACY_CLAMP), 1.0 - ACCURACY_CLAMP)) for p in acc])
    theta = np.zeros(len(user_ids))

    history = []
    for sweep in range(max_iter):
        theta_prev = theta.copy()
        b_prev = b.copy()

        theta = _newton_block(theta, b[i_of_r], u_of_r, y, +1, len(user_ids))
        b = _newton_block(b, theta[u_of_r], i_of_r, y, -1, len(item_ids))

        # joint shift keeps every theta - b (hence every prediction) unchanged
        shift = theta.mean()
        theta -= shift
        b -= shift
        clamped = int(np.sum(np.abs(theta) > PARAM_CLAMP) + np.sum(np.abs(b) > PARAM_CLAMP))
        if clamped:
            logger.debug("sweep %d: clamped %d parameters at +-%g", sweep, clamped, PARAM_CLAMP)
            theta = np.clip(theta, -PARAM_CLAMP, PARAM_CLAMP)
            b = np.clip(b, -PARAM_CLAMP, PARAM_CLAMP)

        history.append((_log_lik(theta[u_of_r] - b[i_of_r], y), clamped))
        delta = max(np.abs(theta - theta_prev).max(), np.abs(b - b_prev).max())
        if delta < tol:
            break

    return RaschParams(
        theta={u: float(theta[u_pos[u]]) for u in user_ids},
        b={i: float(b[i_pos[i]]) for i in item_ids},
        history=tuple(history),
    )


def predict_response(params, user, item):
    """P(correct) = sigma(theta_user - b_item)."""
    try:
        th = params.theta[user]
    except KeyError:
        raise KeyError(f"unknown user {user!r}") from None
    try:
        bv = params.b[item]
    except KeyError:
        raise KeyError(f"unknown item {item!r}") from None
    return float(expit(th - bv))


def understanding_score(params, user, lecture, video_difficulty=None):
    """Probability-scale understanding score sigma(theta - b_video)."""
    if video_difficulty is None:
        return predict_response(params, user, lecture)
    try:
        th = params.theta[user]
    except KeyError:
        raise KeyError(f"unknown user {user!r}") from None
    if not math.isfinite(video_difficulty):
        raise SchemaError(f"video difficulty must be finite, got {video_difficulty}")
    return float(expit(th - video_difficulty))


def predict_understanding(params, user, lecture, video_difficulty=None, threshold=0.5):
    """Threshold the understanding score; the comparison is inclusive."""
    return understanding_score(params, user, lecture, video_difficulty) >= threshold


def log_likelihood(params, records):
    """Training log-likelihood of a parameter table (diagnostic)."""
    total = 0.0
    for r in records:
        u, i, c = (r.user, r.item, r.correct) if hasattr(r, "user") else r
        z = params.theta[u] - params.b[i]
        total += -np.logaddexp(0.0, -z) if c else -np.logaddexp(0.0, z)
    return float(total)
