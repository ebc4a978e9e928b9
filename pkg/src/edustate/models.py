"""Deep-IRT understanding models.

Three variants share twin one-hot MLPs that produce ability (theta) and
difficulty (b); they differ only in the state branch that produces phi:

* ``none`` - no state branch, phi is fixed at 0;
* ``mlp``  - dense branch over the 408-entry global feature vector;
* ``tcn``  - dilated causal convolution stack over the (T, 51) local tensor.

All three heads end in Tanh, so theta, b, phi each lie in [-1, 1] and the
combined probability sigma(theta - (b + phi)) stays in [sigma(-3), sigma(3)].
Anchoring samples (pretest/trial records) carry no facial window; they train
the twin networks with the state branch masked to 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import kernels
from .errors import ConfigError, DivergenceError, InsufficientDataError, SchemaError
from .features import GLOBAL_DIM, GlobalVector, LocalTensor, WindowSpec
from .nn import Adam, CausalConv1d, Mlp, bce_loss, grad_check

VARIANTS = ("none", "mlp", "tcn")
TCN_CHANNELS = (32, 32, 64, 64)
TCN_DILATIONS = (1, 1, 2, 4)
TCN_KERNEL = 3
TWIN_HIDDEN = (128, 64)


def understanding_probability(theta, b, phi=0.0):
    """P(understood) = 1 / (1 + exp(-(theta - (b + phi))))."""
    return expit(np.asarray(theta, dtype=np.float64) - (np.asarray(b) + np.asarray(phi)))


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 64
    epochs: int = 200
    seed: int = 0
    window: WindowSpec | None = None

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ConfigError(
                f"bad training config: lr={self.lr}, batch={self.batch_size}, epochs={self.epochs}"
            )

    def to_dict(self):
        doc = {"lr": self.lr, "batch_size": self.batch_size,
               "epochs": self.epochs, "seed": self.seed}
        if self.window is not None:
            doc["window"] = {"minutes": self.window.minutes,
                             "pool_stride": self.window.pool_stride}
        return doc


@dataclass(frozen=True)
class Sample:
    """One training/prediction sample.

    ``state_active`` is False for anchoring records (phi masked to 0);
    ``features`` must be present exactly when the model variant has a state
    branch and the sample is state-bearing.
    """

    user: str
    item: str
    label: bool
    features: object = None
    state_active: bool = False


class TcnBranch:
    """Causal conv stack over (batch, T, 51) windows with a dense head."""

    def __init__(self, rng, readout="last", in_ch=51):
        if readout not in ("last", "mean"):
            raise ConfigError(f"unknown TCN readout {readout!r}")
        self.readout = readout
        self.convs = []
        prev = in_ch
        for i, (ch, dil) in enumerate(zip(TCN_CHANNELS, TCN_DILATIONS)):
            self.convs.append(CausalConv1d(
                prev, ch, dilation=dil, kernel=TCN_KERNEL, activation="relu",
                rng=rng, name=f"state.conv{i}",
            ))
            prev = ch
        self.head = Mlp([prev, 32, 1], ("relu", "tanh"), rng, name="state.head")
        self._t = None

    def forward(self, x):
        for conv in self.convs:
            x = conv.forward(x)
        self._t = x.shape[1]
        if self.readout == "last":
            pooled = x[:, -1, :]
        else:
            pooled = x.mean(axis=1)
        return self.head.forward(pooled)

    def backward(self, g):
        g = self.head.backward(g)
        gx = np.zeros((g.shape[0], self._t, g.shape[1]))
        if self.readout == "last":
            gx[:, -1, :] = g
        else:
            gx += g[:, None, :] / self._t
        for conv in reversed(self.convs):
            gx = conv.backward(gx)
        return gx

    def params(self):
        return [p for c in self.convs for p in c.params()] + self.head.params()

    def grads(self):
        return [g for c in self.convs for g in c.grads()] + self.head.grads()

    def param_names(self):
        return [n for c in self.convs for n in c.param_names()] + self.head.param_names()


class DeepIrtModel:
    """Twin ability/difficulty networks plus an optional facial-state branch."""

    def __init__(self, user_ids, item_ids, variant="none", seed=0, tcn_readout="last"):
        if variant not in VARIANTS:
            raise ConfigError(f"unknown variant {variant!r}, expected one of {VARIANTS}")
        users = sorted(set(user_ids))
        items = sorted(set(item_ids))
        if not users or not items:
            raise ConfigError("need at least one user and one item")
        self.variant = variant
        self.seed = int(seed)
        self.tcn_readout = tcn_readout
        self.user_index = {u: i for i, u in enumerate(users)}
        self.item_index = {it: i for i, it in enumerate(items)}
        self.n_users = len(users)
        self.n_items = len(items)

        rng = np.random.default_rng(self.seed)
        h1, h2 = TWIN_HIDDEN
        self.ability = Mlp([self.n_users, h1, h2, 1], ("relu", "relu", "tanh"), rng, "ability")
        self.difficulty = Mlp([self.n_items, h1, h2, 1], ("relu", "relu", "tanh"), rng, "difficulty")
        if variant == "mlp":
            self.state = Mlp([GLOBAL_DIM, h1, h2, 1], ("relu", "relu", "tanh"), rng, "state")
        elif variant == "tcn":
            self.state = TcnBranch(rng, readout=tcn_readout)
        else:
            self.state = None
        self._cache = None

    # -- parameter plumbing -------------------------------------------------

    def networks(self):
        nets = [self.ability, self.difficulty]
        if self.state is not None:
            nets.append(self.state)
        return nets

    def params(self):
        return [p for net in self.networks() for p in net.params()]

    def grads(self):
        return [g for net in self.networks() for g in net.grads()]

    def param_names(self):
        return [n for net in self.networks() for n in net.param_names()]

    # -- forward / backward -------------------------------------------------

    def _one_hot(self, idx, n):
        out = np.zeros((len(idx), n))
        out[np.arange(len(idx)), idx] = 1.0
        return out

    def forward_batch(self, user_idx, item_idx, features=None, state_mask=None):
        """Probabilities for index-encoded samples.

        ``features``: (B, 408) for the mlp variant or (B, T, 51) for tcn,
        rows meaningful only where ``state_mask`` is nonzero.
        """
        user_idx = np.asarray(user_idx, dtype=np.int64)
        item_idx = np.asarray(item_idx, dtype=np.int64)
        n = len(user_idx)
        active = np.zeros(n, dtype=bool)
        feats_active = None
        if self.state is not None and state_mask is not None:
            active = np.asarray(state_mask, dtype=bool)
            if active.any():
                if features is None:
                    raise SchemaError("state-bearing samples need features")
                feats_active = np.ascontiguousarray(features[active])
        return self._forward_encoded(
            self._one_hot(user_idx, self.n_users),
            self._one_hot(item_idx, self.n_items),
            feats_active, active,
        )

    def _forward_encoded(self, user_onehot, item_onehot, feats_active, active):
        theta = self.ability.forward(user_onehot)[:, 0]
        b = self.difficulty.forward(item_onehot)[:, 0]
        phi = np.zeros(len(theta))
        if self.state is not None and active.any():
            phi[active] = self.state.forward(feats_active)[:, 0]
        p = expit(theta - (b + phi))
        self._cache = (len(theta), active)
        return p

    def backward(self, dz):
        """Backpropagate d(loss)/dz through all branches."""
        n, active = self._cache
        dz = np.asarray(dz, dtype=np.float64).reshape(n, 1)
        self.ability.backward(dz)
        self.difficulty.backward(-dz)
        if self.state is not None and active.any():
            self.state.backward(-dz[active])

    def forward(self, user, item, features=None, stateless=False):
        """Probability for a single sample (wraps forward_batch)."""
        try:
            ui = self.user_index[user]
        except KeyError:
            raise KeyError(f"unknown user {user!r}") from None
        try:
            ii = self.item_index[item]
        except KeyError:
            raise KeyError(f"unknown item {item!r}") from None
        state_on = self.state is not None and not stateless
        if state_on and features is None:
            raise SchemaError(f"variant {self.variant!r} needs features for state-bearing samples")
        if self.state is None and features is not None:
            raise SchemaError("variant 'none' takes no features")
        feats = None
        if state_on:
            feats = _stack_features([features], self.variant)
        p = self.forward_batch([ui], [ii], feats, np.array([state_on]))
        return float(p[0])


def _feature_array(features, variant):
    if variant == "mlp":
        arr = features.flat if isinstance(features, GlobalVector) else np.asarray(features, dtype=np.float64)
        if arr.shape != (GLOBAL_DIM,):
            raise SchemaError(f"mlp features must be ({GLOBAL_DIM},), got {arr.shape}")
        return arr
    arr = features.frames if isinstance(features, LocalTensor) else np.asarray(features, dtype=np.float64)
    if arr.ndim != 2:
        raise SchemaError(f"tcn features must be (T, channels), got {arr.shape}")
    return arr


def _stack_features(feature_list, variant):
    return np.stack([_feature_array(f, variant) for f in feature_list])


def _prepare(model, samples):
    """Index arrays plus a dense feature block for the state-active samples."""
    n = len(samples)
    u_idx = np.empty(n, dtype=np.int64)
    i_idx = np.empty(n, dtype=np.int64)
    y = np.empty(n, dtype=np.float64)
    mask = np.zeros(n, dtype=bool)
    for k, s in enumerate(samples):
        try:
            u_idx[k] = model.user_index[s.user]
        except KeyError:
            raise KeyError(f"unknown user {s.user!r} in sample {k}") from None
        try:
            i_idx[k] = model.item_index[s.item]
        except KeyError:
            raise KeyError(f"unknown item {s.item!r} in sample {k}") from None
        y[k] = float(s.label)
        mask[k] = bool(s.state_active) and model.state is not None

    feats = None
    feat_row = np.full(n, -1, dtype=np.int64)
    if model.state is not None and mask.any():
        active_feats = []
        for k, s in enumerate(samples):
            if mask[k]:
                if s.features is None:
                    raise SchemaError(f"sample {k} ({s.user}, {s.item}) is state-bearing but has no features")
                feat_row[k] = len(active_feats)
                active_feats.append(_feature_array(s.features, model.variant))
        feats = np.stack(active_feats)
    return u_idx, i_idx, y, mask, feats, feat_row


def _batch_features(feats, feat_row, sel, mask_sel):
    if feats is None or not mask_sel.any():
        return None
    rows = feat_row[sel]
    out_shape = (len(sel),) + feats.shape[1:]
    block = np.zeros(out_shape)
    block[mask_sel] = feats[rows[mask_sel]]
    return block


def train(model, samples, config):
    """Seeded-shuffle mini-batch Adam on binary cross-entropy.

    Returns the per-epoch mean training loss.  Deterministic given the seed;
    raises DivergenceError (with epoch/batch) if the loss goes non-finite.
    """
    samples = list(samples)
    if not samples:
        raise InsufficientDataError("empty training set")
    u_idx, i_idx, y, mask, feats, feat_row = _prepare(model, samples)

    rng = np.random.default_rng(config.seed)
    opt = Adam(model.params(), lr=config.lr)
    n = len(samples)
    order = np.arange(n)
    curve = []
    for epoch in range(config.epochs):
        rng.shuffle(order)
        total = 0.0
        for bi, start in enumerate(range(0, n, config.batch_size)):
            sel = order[start:start + config.batch_size]
            mask_sel = mask[sel]
            block = _batch_features(feats, feat_row, sel, mask_sel)
            p = model.forward_batch(u_idx[sel], i_idx[sel], block, mask_sel)
            loss = bce_loss(p, y[sel])
            if not np.isfinite(loss):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}, batch {bi}", epoch=epoch, batch=bi
                )
            dz = (p - y[sel]) / len(sel)
            model.backward(dz)
            opt.step(model.params(), model.grads())
            total += loss * len(sel)
        curve.append(total / n)
    return curve


def predict_batch(model, samples):
    """Elementwise forward over samples; output order matches input order."""
    samples = list(samples)
    if not samples:
        return np.zeros(0)
    u_idx, i_idx, y, mask, feats, feat_row = _prepare(model, samples)
    block = _batch_features(feats, feat_row, np.arange(len(samples)), mask)
    return model.forward_batch(u_idx, i_idx, block, mask)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(model, path, train_config=None, extra=None):
    """Single-file binary checkpoint: parameter arrays plus a JSON manifest."""
    manifest = {
        "variant": model.variant,
        "seed": model.seed,
        "tcn_readout": model.tcn_readout,
        "users": sorted(model.user_index, key=model.user_index.get),
        "items": sorted(model.item_index, key=model.item_index.get),
        "param_names": model.param_names(),
        "train_config": train_config.to_dict() if train_config else None,
        "extra": extra or {},
    }
    arrays = {f"param_{k}": p for k, p in enumerate(model.params())}
    np.savez(path, manifest=json.dumps(manifest, sort_keys=True), **arrays)


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as doc:
        manifest = json.loads(str(doc["manifest"]))
        model = DeepIrtModel(
            manifest["users"], manifest["items"],
            variant=manifest["variant"], seed=manifest["seed"],
            tcn_readout=manifest["tcn_readout"],
        )
        for k, p in enumerate(model.params()):
            saved = doc[f"param_{k}"]
            if saved.shape != p.shape:
                raise SchemaError(f"checkpoint param {k} shape {saved.shape} != {p.shape}")
            p[...] = saved
    return model, manifest


# ---------------------------------------------------------------------------
# Gradient verification over the shipped architectures
# ---------------------------------------------------------------------------

def _toy_batch(model, rng, n_samples=3, t_frames=8):
    u = np.array([k % model.n_users for k in range(n_samples)], dtype=np.int64)
    i = np.array([k % model.n_items for k in range(n_samples)], dtype=np.int64)
    y = np.array([k % 2 for k in range(n_samples)], dtype=np.float64)
    mask = np.zeros(n_samples, dtype=bool)
    feats = None
    if model.variant == "mlp":
        mask[:] = [True, False, True][:n_samples]
        feats = rng.uniform(0.0, 1.0, (n_samples, GLOBAL_DIM))
    elif model.variant == "tcn":
        mask[:] = [True, False, True][:n_samples]
        feats = rng.uniform(0.0, 1.0, (n_samples, t_frames, 51))
    return u, i, y, mask, feats


def _kink_safe_shift(sites, prefer_margin=0.02, outside=0.5):
    """Bias shift placing zero inside the largest gap between relu sites.

    An interior gap keeps both active and inactive units in play; when even
    the best interior gap is narrower than ``prefer_margin`` the zero point
    moves outside the site range instead.
    """
    s = np.sort(np.asarray(sites, dtype=np.float64))
    target = s[-1] + outside
    margin = outside
    if s.size > 1:
        gaps = s[1:] - s[:-1]
        k = int(np.argmax(gaps))
        if gaps[k] / 2.0 >= prefer_margin:
            target = (s[k] + s[k + 1]) / 2.0
            margin = gaps[k] / 2.0
    return -target, margin


def _nudge_relu_biases(model, user_onehot, item_onehot, feats_active, active):
    """Move each relu unit's bias so no preactivation sits near the kink.

    Central differences at h straddle [-h, +h] around the evaluation point;
    a relu site within a perturbation's reach of zero makes the numerical
    derivative one-sided and meaningless there.  Gradients are point-wise,
    so the check runs at a nearby parameter point with safe margins.
    Layers are processed in order because earlier shifts move later inputs.
    """
    def nudge_mlp(net, x):
        for layer in net.layers:
            if layer.activation == "relu":
                z = x @ layer.w.T + layer.b
                for j in range(z.shape[1]):
                    shift, _ = _kink_safe_shift(z[:, j])
                    layer.b[j] += shift
            x = layer.forward(x)
        return x

    nudge_mlp(model.ability, user_onehot)
    nudge_mlp(model.difficulty, item_onehot)
    if model.variant == "mlp":
        nudge_mlp(model.state, feats_active)
    elif model.variant == "tcn":
        x = feats_active
        for conv in model.state.convs:
            z = kernels.conv1d_forward(np.ascontiguousarray(x), conv.w, conv.b, conv.dilation)
            for c in range(z.shape[2]):
                shift, _ = _kink_safe_shift(z[:, :, c].ravel())
                conv.b[c] += shift
            x = conv.forward(x)
        nudge_mlp(model.state.head, x[:, -1, :] if model.state.readout == "last"
                  else x.mean(axis=1))


def gradcheck_model(model, h=1e-4, seed=99, corrupt=False):
    """Finite-difference check of every parameter of one model."""
    rng = np.random.default_rng(seed)
    u, i, y, mask, feats = _toy_batch(model, rng)
    user_onehot = model._one_hot(u, model.n_users)
    item_onehot = model._one_hot(i, model.n_items)
    feats_active = None
    if feats is not None:
        feats_active = np.ascontiguousarray(feats[mask])
    _nudge_relu_biases(model, user_onehot, item_onehot, feats_active, mask)

    def loss_fn():
        p = model._forward_encoded(user_onehot, item_onehot, feats_active, mask)
        return bce_loss(p, y)

    p = model._forward_encoded(user_onehot, item_onehot, feats_active, mask)
    model.backward((p - y) / len(y))
    analytic = [g.copy() for g in model.grads()]
    if corrupt:
        analytic[0].reshape(-1)[0] += 0.05
    return grad_check(loss_fn, model.params(), analytic, h=h, names=model.param_names())


def gradcheck_architectures(seed=7, h=1e-4, corrupt=False):
    """Run gradcheck on toy-sized builds of all three variants."""
    reports = {}
    for variant in VARIANTS:
        model = DeepIrtModel(
            [f"u{k}" for k in range(2)], [f"i{k}" for k in range(3)],
            variant=variant, seed=seed,
        )
        reports[variant] = gradcheck_model(model, h=h, seed=seed + 1, corrupt=corrupt)
    return reports
