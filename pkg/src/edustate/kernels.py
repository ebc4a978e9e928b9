"""Hot numeric kernels: numba-JIT implementations with a pure-numpy fallback.

The JIT path is used when numba imports successfully, unless the environment
variable ``EDUSTATE_NUMBA`` is set to ``0``/``false``/``off``/``no`` (checked
once at import).  Both paths are deterministic; they may differ in the last
couple of float bits because summation order differs.  ``use_numba()`` reports
which path the dispatched names (``conv1d_forward`` etc.) resolve to; the
explicitly suffixed ``*_numpy`` / ``*_jit`` functions are always available for
benchmarking and cross-checking (``*_jit`` is ``None`` when numba is off).

Kernels here are the ones that dominate runtime: the dilated causal
convolutions inside the temporal state branch, and the clamped mean-reverting
random walks behind synthetic facial streams.  Everything else in the package
is plain vectorized numpy (dense layers go through BLAS, which a hand-written
loop would not beat).
"""

import os

import numpy as np

__all__ = [
    "use_numba",
    "conv1d_forward",
    "conv1d_backward",
    "mean_reverting_walk",
    "conv1d_forward_numpy",
    "conv1d_backward_numpy",
    "mean_reverting_walk_numpy",
    "conv1d_forward_jit",
    "conv1d_backward_jit",
    "mean_reverting_walk_jit",
]


def _env_wants_numba():
    flag = os.environ.get("EDUSTATE_NUMBA", "1").strip().lower()
    return flag not in ("0", "false", "off", "no")


# ---------------------------------------------------------------------------
# Pure-numpy implementations
# ---------------------------------------------------------------------------

def conv1d_forward_numpy(x, w, bias, dilation):
    """Causal dilated 1-d convolution.

    x: (B, T, C_in), w: (K, C_in, C_out), bias: (C_out,) -> (B, T, C_out).
    Left zero-padding of (K-1)*dilation keeps output length equal to input
    length; output at time t therefore depends only on inputs at times <= t.
    """
    n_b, n_t, c_in = x.shape
    n_k = w.shape[0]
    pad = (n_k - 1) * dilation
    xp = np.zeros((n_b, n_t + pad, c_in), dtype=x.dtype)
    xp[:, pad:, :] = x
    y = np.broadcast_to(bias, (n_b, n_t, w.shape[2])).copy()
    for k in range(n_k):
        y += xp[:, k * dilation:k * dilation + n_t, :] @ w[k]
    return y


def conv1d_backward_numpy(x, w, gy, dilation):
    """Gradients of conv1d_forward: returns (gx, gw, gbias)."""
    n_b, n_t, c_in = x.shape
    n_k = w.shape[0]
    pad = (n_k - 1) * dilation
    xp = np.zeros((n_b, n_t + pad, c_in), dtype=x.dtype)
    xp[:, pad:, :] = x
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(w)
    for k in range(n_k):
        lo = k * dilation
        gxp[:, lo:lo + n_t, :] += gy @ w[k].T
        gw[k] = np.tensordot(xp[:, lo:lo + n_t, :], gy, axes=[(0, 1), (0, 1)])
    gx = np.ascontiguousarray(gxp[:, pad:, :])
    gbias = gy.sum(axis=(0, 1))
    return gx, gw, gbias


def mean_reverting_walk_numpy(start, baseline, reversion, noise):
    """Clamped mean-reverting walk, one column per channel.

    start, baseline: (C,); noise: (T, C).  Step:
    x <- clip(x + reversion * (baseline - x) + noise[t], 0, 1).
    The clamp makes the recurrence nonlinear, so it cannot be vectorized
    over time; this fallback vectorizes over channels per step.
    """
    n_t, n_c = noise.shape
    out = np.empty((n_t, n_c), dtype=noise.dtype)
    x = start.astype(noise.dtype, copy=True)
    for t in range(n_t):
        x = x + reversion * (baseline - x) + noise[t]
        np.clip(x, 0.0, 1.0, out=x)
        out[t] = x
    return out


# ---------------------------------------------------------------------------
# numba implementations (same arithmetic, loop form)
# ---------------------------------------------------------------------------

conv1d_forward_jit = None
conv1d_backward_jit = None
mean_reverting_walk_jit = None

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False

if _HAVE_NUMBA:

    @njit(cache=True)
    def _conv1d_forward(x, w, bias, dilation):
        n_b, n_t, c_in = x.shape
        n_k, _, c_out = w.shape
        y = np.empty((n_b, n_t, c_out), dtype=x.dtype)
        for b in range(n_b):
            for t in range(n_t):
                row = y[b, t]
                for oc in range(c_out):
                    row[oc] = bias[oc]
                for k in range(n_k):
                    ts = t - (n_k - 1 - k) * dilation
                    if ts < 0:
                        continue
                    for ic in range(c_in):
                        xv = x[b, ts, ic]
                        wk = w[k, ic]
                        for oc in range(c_out):
                            row[oc] += xv * wk[oc]
        return y

    @njit(cache=True)
    def _conv1d_backward(x, w, gy, dilation):
        n_b, n_t, c_in = x.shape
        n_k, _, c_out = w.shape
        gx = np.zeros((n_b, n_t, c_in), dtype=x.dtype)
        gw = np.zeros_like(w)
        gbias = np.zeros(c_out, dtype=x.dtype)
        for b in range(n_b):
            for t in range(n_t):
                gyr = gy[b, t]
                for oc in range(c_out):
                    gbias[oc] += gyr[oc]
                for k in range(n_k):
                    ts = t - (n_k - 1 - k) * dilation
                    if ts < 0:
                        continue
                    xr = x[b, ts]
                    gxr = gx[b, ts]
                    for ic in range(c_in):
                        wk = w[k, ic]
                        gwk = gw[k, ic]
                        acc = 0.0
                        xv = xr[ic]
                        for oc in range(c_out):
                            g = gyr[oc]
                            acc += g * wk[oc]
                            gwk[oc] += xv * g
                        gxr[ic] += acc
        return gx, gw, gbias

    @njit(cache=True)
    def _mean_reverting_walk(start, baseline, reversion, noise):
        n_t, n_c = noise.shape
        out = np.empty((n_t, n_c), dtype=noise.dtype)
        x = start.astype(noise.dtype).copy()
        for t in range(n_t):
            for c in range(n_c):
                v = x[c] + reversion * (baseline[c] - x[c]) + noise[t, c]
                if v < 0.0:
                    v = 0.0
                elif v > 1.0:
                    v = 1.0
                x[c] = v
                out[t, c] = v
        return out

    conv1d_forward_jit = _conv1d_forward
    conv1d_backward_jit = _conv1d_backward
    mean_reverting_walk_jit = _mean_reverting_walk


NUMBA_ENABLED = _HAVE_NUMBA and _env_wants_numba()

if NUMBA_ENABLED:
    conv1d_forward = conv1d_forward_jit
    conv1d_backward = conv1d_backward_jit
    mean_reverting_walk = mean_reverting_walk_jit
else:
    conv1d_forward = conv1d_forward_numpy
    conv1d_backward = conv1d_backward_numpy
    mean_reverting_walk = mean_reverting_walk_numpy


def use_numba():
    """True when the dispatched kernels run through the numba JIT path."""
    return NUMBA_ENABLED
