"""Hot numeric kernels: trajectory geometry, Adam update, fused inference.

Every kernel exists in two flavors selected by :mod:`intent.backend`:

* a numba ``@njit`` build (default when numba is importable), and
* a pure-numpy build (``INTENT_NUMBA=0``).

Loop-shaped kernels (geometry) have a hand-vectorized numpy twin that
performs the exact same scalar operations, so the two backends agree
bitwise. The Adam update and the fused per-window forward are written in
numpy-compatible form and compiled as-is.

``benchmarks/bench_backends.py`` times the two flavors against each other;
``tests/test_kernels.py`` pins their numerical agreement.
"""

import numpy as np

from .backend import NUMBA_ENABLED, jit_kernel

# ---------------------------------------------------------------------------
# geometry: velocity sequence


def _velocity_loop(pts, dt):
    m = pts.shape[0]
    out = np.empty(m)
    for t in range(m - 1):
        dx = pts[t + 1, 0] - pts[t, 0]
        dy = pts[t + 1, 1] - pts[t, 1]
        out[t] = np.sqrt(dx * dx + dy * dy) / dt
    out[m - 1] = out[m - 2]
    return out


def velocity_sequence_numpy(pts, dt):
    """Per-step speed ``|p[t+1]-p[t]| / dt``; last entry duplicates its
    predecessor so the sequence has one value per observed location."""
    d = np.diff(pts, axis=0)
    out = np.empty(pts.shape[0])
    out[:-1] = np.sqrt(d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1]) / dt
    out[-1] = out[-2]
    return out


# ---------------------------------------------------------------------------
# geometry: radian (heading) sequence
#
# Heading at step t is derived from arcsin of the normalized y displacement
# with a three-way case split on the displacement signs, yielding angles in
# [-pi, pi]. Zero-length steps carry the previous heading forward (0.0 when
# there is no previous step); the last entry duplicates its predecessor.


def _radian_loop(pts):
    m = pts.shape[0]
    out = np.empty(m)
    prev = 0.0
    for t in range(m - 1):
        dx = pts[t + 1, 0] - pts[t, 0]
        dy = pts[t + 1, 1] - pts[t, 1]
        r = np.sqrt(dx * dx + dy * dy)
        if r == 0.0:
            out[t] = prev
        else:
            ratio = dy / r
            if ratio > 1.0:
                ratio = 1.0
            elif ratio < -1.0:
                ratio = -1.0
            rad = np.arcsin(ratio)
            if dx > 0.0:
                out[t] = rad
            elif dy > 0.0:
                out[t] = np.pi - rad
            else:
                out[t] = -rad - np.pi
            prev = out[t]
    out[m - 1] = out[m - 2]
    return out


def radian_sequence_numpy(pts):
    m = pts.shape[0]
    d = np.diff(pts, axis=0)
    dx, dy = d[:, 0], d[:, 1]
    r = np.sqrt(dx * dx + dy * dy)
    moving = r > 0.0
    ratio = np.clip(np.divide(dy, r, out=np.zeros(m - 1), where=moving), -1.0, 1.0)
    rad = np.arcsin(ratio)
    val = np.where(dx > 0.0, rad, np.where(dy > 0.0, np.pi - rad, -rad - np.pi))
    # carry the previous moving step's heading across zero-length steps
    last_moving = np.where(moving, np.arange(m - 1), -1)
    np.maximum.accumulate(last_moving, out=last_moving)
    filled = np.where(last_moving >= 0, val[np.maximum(last_moving, 0)], 0.0)
    out = np.empty(m)
    out[:-1] = filled
    out[-1] = out[-2]
    return out


# ---------------------------------------------------------------------------
# geometry: canonicalizing transform and its inverse
#
# Forward map: translate by -origin, then rotate so the observation chord
# lands on the nonnegative x axis. The rotation sign depends on whether the
# chord initially points to positive y (``flip``).


def _transform_loop(pts, phi, ox, oy, flip):
    m = pts.shape[0]
    out = np.empty((m, 2))
    c = np.cos(phi)
    s = np.sin(phi)
    for t in range(m):
        dx = pts[t, 0] - ox
        dy = pts[t, 1] - oy
        xc = c * dx
        xs = s * dy
        yc = s * dx
        ys = c * dy
        if flip:
            out[t, 0] = xc + xs
            out[t, 1] = -yc + ys
        else:
            out[t, 0] = xc - xs
            out[t, 1] = yc + ys
    return out


def transform_points_numpy(pts, phi, ox, oy, flip):
    c = np.cos(phi)
    s = np.sin(phi)
    dx = pts[:, 0] - ox
    dy = pts[:, 1] - oy
    xc = c * dx
    xs = s * dy
    yc = s * dx
    ys = c * dy
    out = np.empty_like(pts)
    if flip:
        out[:, 0] = xc + xs
        out[:, 1] = -yc + ys
    else:
        out[:, 0] = xc - xs
        out[:, 1] = yc + ys
    return out


def _inverse_loop(pts, phi, ox, oy, flip):
    m = pts.shape[0]
    out = np.empty((m, 2))
    c = np.cos(phi)
    s = np.sin(phi)
    for t in range(m):
        x = pts[t, 0]
        y = pts[t, 1]
        if flip:
            out[t, 0] = c * x - s * y + ox
            out[t, 1] = s * x + c * y + oy
        else:
            out[t, 0] = c * x + s * y + ox
            out[t, 1] = -s * x + c * y + oy
    return out


def inverse_points_numpy(pts, phi, ox, oy, flip):
    c = np.cos(phi)
    s = np.sin(phi)
    x = pts[:, 0]
    y = pts[:, 1]
    out = np.empty_like(pts)
    if flip:
        out[:, 0] = c * x - s * y + ox
        out[:, 1] = s * x + c * y + oy
    else:
        out[:, 0] = c * x + s * y + ox
        out[:, 1] = -s * x + c * y + oy
    return out


# ---------------------------------------------------------------------------
# Adam update on flat 1-D buffers
#
# The numba build is an explicit loop (no temporaries); the numpy twin
# applies the same per-element expressions, so results agree bitwise.


def _adam_loop(p, g, m, v, t, lr, b1, b2, eps):
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for i in range(p.shape[0]):
        m[i] = b1 * m[i] + (1.0 - b1) * g[i]
        v[i] = b2 * v[i] + (1.0 - b2) * (g[i] * g[i])
        p[i] -= lr * (m[i] / c1) / (np.sqrt(v[i] / c2) + eps)


def adam_update_numpy(p, g, m, v, t, lr, b1, b2, eps):
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    m *= b1
    m += (1.0 - b1) * g
    v *= b2
    v += (1.0 - b2) * (g * g)
    p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


# ---------------------------------------------------------------------------
# fused per-window inference forward (single source for both backends)
#
# Computes the whole network for one window: feature encoders -> base
# encoder -> projection/softmax -> per-timestep location predictors with
# gated hidden state and intention-weighted output heads. Per-timestep
# parameters arrive stacked along a leading t axis. The hidden/cell carry
# vectors of the gate block are fixed at zero, so their weight product
# drops out and only the bias contributes.


def _fused_forward_impl(vel, rad, ty, raw, last,
                        w_vel, b_vel, w_rad, b_rad, w_ty, b_ty,
                        w_raw, b_raw,
                        w_rep, b_rep, w_proj, b_proj,
                        w_loc, b_loc, w_comb, b_comb,
                        w_gin, b_gin, b_ghid,
                        w_head, b_head,
                        raw_mode, hard_mode):
    if raw_mode:
        feat = np.tanh(np.dot(w_raw, raw) + b_raw)
    else:
        ev = np.tanh(np.dot(w_vel, vel) + b_vel)
        er = np.tanh(np.dot(w_rad, rad) + b_rad)
        ey = np.tanh(np.dot(w_ty, ty) + b_ty)
        feat = np.concatenate((ev, er, ey))
    rh = np.tanh(np.dot(w_rep, feat) + b_rep)
    rz = np.dot(w_proj, rh) + b_proj

    z = rz - np.max(rz)
    ez = np.exp(z)
    soft = ez / np.sum(ez)
    kbest = int(np.argmax(soft))

    t_pred = w_loc.shape[0]
    n_heads = w_head.shape[1]
    pred = np.empty((t_pred, 2))
    for t in range(t_pred):
        le = np.tanh(np.dot(w_loc[t], last) + b_loc[t])
        rc_in = np.concatenate((rh, le))
        rc = np.tanh(np.dot(w_comb[t], rc_in) + b_comb[t])
        gates = (np.dot(w_gin[t], rc) + b_gin[t]) + b_ghid[t]
        h = gates.shape[0] // 4
        gate_i = gates[:h]
        gate_c = gates[2 * h:3 * h]
        sig_i = 1.0 / (1.0 + np.exp(-gate_i))
        sig_c = 1.0 / (1.0 + np.exp(-gate_c))
        hvec = sig_c * np.tanh(sig_i * np.tanh(gate_c))
        if hard_mode:
            out = np.dot(w_head[t, kbest], hvec) + b_head[t, kbest]
        else:
            out = np.zeros(2)
            for k in range(n_heads):
                out = out + soft[k] * (np.dot(w_head[t, k], hvec) + b_head[t, k])
        pred[t, 0] = out[0]
        pred[t, 1] = out[1]
    return pred, soft, rh, rz


# ---------------------------------------------------------------------------
# backend binding

velocity_sequence_numba = None
radian_sequence_numba = None
transform_points_numba = None
inverse_points_numba = None
adam_update_numba = None
fused_forward_numba = None

fused_forward_numpy = _fused_forward_impl

if NUMBA_ENABLED:
    velocity_sequence_numba = jit_kernel(_velocity_loop)
    radian_sequence_numba = jit_kernel(_radian_loop)
    transform_points_numba = jit_kernel(_transform_loop)
    inverse_points_numba = jit_kernel(_inverse_loop)
    adam_update_numba = jit_kernel(_adam_loop)
    fused_forward_numba = jit_kernel(_fused_forward_impl)

    velocity_sequence = velocity_sequence_numba
    radian_sequence = radian_sequence_numba
    transform_points = transform_points_numba
    inverse_points = inverse_points_numba
    adam_update = adam_update_numba
    fused_forward = fused_forward_numba
else:
    velocity_sequence = velocity_sequence_numpy
    radian_sequence = radian_sequence_numpy
    transform_points = transform_points_numpy
    inverse_points = inverse_points_numpy
    adam_update = adam_update_numpy
    fused_forward = fused_forward_numpy


def warm_up():
    """Trigger JIT compilation of every numba kernel (no-op on numpy)."""
    pts = np.array([[0.0, 0.0], [1.0, 0.5], [2.0, 0.5]])
    velocity_sequence(pts, 0.4)
    radian_sequence(pts)
    transform_points(pts, 0.3, 0.0, 0.0, True)
    inverse_points(pts, 0.3, 0.0, 0.0, False)
    p = np.zeros(3)
    adam_update(p, np.ones(3), np.zeros(3), np.zeros(3), 1, 0.0, 0.9, 0.999, 1e-8)
