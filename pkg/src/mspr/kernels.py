"""Hot numeric kernels with numba and pure-numpy implementations.

Every kernel exists twice: a numba ``@njit`` version and a numpy fallback
with the same call signature and (up to float summation order) the same
output.  The active set is chosen once at import time:

* ``MSPR_NUMBA=0`` in the environment forces the numpy path;
* otherwise numba is used when importable, numpy when not.

Matrix products are deliberately NOT here: ``np.dot`` already dispatches to
BLAS and a jitted loop cannot beat it.  The kernels below are the fused
elementwise passes and short scans that dominate the remaining runtime.

``benchmarks/bench_kernels.py`` times both paths side by side.
"""

from __future__ import annotations

import os

import numpy as np

_FLAG = os.environ.get("MSPR_NUMBA", "1").strip().lower()
_WANT_NUMBA = _FLAG not in ("0", "false", "off", "no")

try:
    if _WANT_NUMBA:
        from numba import njit
    else:  # pragma: no cover - exercised via subprocess in tests
        njit = None
except ImportError:  # pragma: no cover
    njit = None

NUMBA_ENABLED = njit is not None


# ---------------------------------------------------------------------------
# numpy implementations (always defined; also the reference semantics)
# ---------------------------------------------------------------------------

def _np_relu_fwd(x):
    return np.maximum(x, 0.0)


def _np_relu_bwd(g, x):
    return np.where(x > 0.0, g, 0.0)


def _np_tanh_bwd(g, y):
    return g * (1.0 - y * y)


def _np_adam_fused(p, g, m, v, t, lr, b1, b2, eps):
    """One bias-corrected Adam update. Returns fresh (p', m', v') arrays."""
    m2 = b1 * m + (1.0 - b1) * g
    v2 = b2 * v + (1.0 - b2) * g * g
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    p2 = p - lr * (m2 / c1) / (np.sqrt(v2 / c2) + eps)
    return p2, m2, v2


def _np_msd_loss(pred, target):
    """Mean squared difference over all elements, plus d(loss)/d(pred)."""
    e = pred - target
    n = e.size
    loss = float(np.sum(e * e)) / n
    return loss, (2.0 / n) * e


def _np_huber_loss(pred, target, delta):
    """Mean Huber loss over all elements, plus d(loss)/d(pred)."""
    e = pred - target
    n = e.size
    ae = np.abs(e)
    quad = ae <= delta
    vals = np.where(quad, 0.5 * e * e, delta * (ae - 0.5 * delta))
    grad = np.where(quad, e, delta * np.sign(e)) / n
    return float(np.sum(vals)) / n, grad


def _np_nstep_scan(succ, csum):
    """First-success scan over n-step windows.

    succ: (B, n) boolean, succ[i, k] = goal reached at step t+k+1.
    csum: (n+1,) table with csum[K] = sum_{k<K} gamma^k.
    Returns (R, mask, kstar): R[i] = -csum[kstar], mask 0 where success
    occurred inside the window, kstar = first success offset (or n).
    """
    b, n = succ.shape
    any_s = succ.any(axis=1)
    kstar = np.where(any_s, succ.argmax(axis=1), n).astype(np.int64)
    r = -csum[kstar]
    mask = np.where(any_s, 0.0, 1.0)
    return r, mask, kstar


def _np_maze_step(x, y, ax, ay, scale, walls, margin):
    """One pointmaze step: per-axis move (x then y), stopping at wall faces.

    Coordinates are in cell units; cell (row, col) = (floor(y), floor(x)).
    Actions are clipped to [-1, 1] before scaling.
    """
    ax = min(max(ax, -1.0), 1.0)
    ay = min(max(ay, -1.0), 1.0)
    row = int(np.floor(y))
    nx = x + scale * ax
    col2 = int(np.floor(nx))
    if walls[row, col2]:
        if ax > 0.0:
            nx = float(col2) - margin
        else:
            nx = float(col2) + 1.0 + margin
    ny = y + scale * ay
    col = int(np.floor(nx))
    row2 = int(np.floor(ny))
    if walls[row2, col]:
        if ay > 0.0:
            ny = float(row2) - margin
        else:
            ny = float(row2) + 1.0 + margin
    return nx, ny


def _np_pushbox_step(ax_, ay_, bx, by, ux, uy, scale, lo, hi, margin, sep):
    """One pushbox step: agent moves in the empty arena, box keeps distance.

    (ax_, ay_) agent, (bx, by) box, (ux, uy) action. The agent is clamped to
    [lo+margin, hi-margin]; if it ends up closer than `sep` to the box, the
    box is displaced along the agent->box direction to distance `sep` and
    clipped to [lo, hi]; if clipping re-violates the separation the agent
    retreats along the same line instead.
    """
    ux = min(max(ux, -1.0), 1.0)
    uy = min(max(uy, -1.0), 1.0)
    nax = ax_ + scale * ux
    nay = ay_ + scale * uy
    nax = min(max(nax, lo + margin), hi - margin)
    nay = min(max(nay, lo + margin), hi - margin)
    dx = bx - nax
    dy = by - nay
    d = np.sqrt(dx * dx + dy * dy)
    if d < sep:
        if d > 0.0:
            ex = dx / d
            ey = dy / d
        else:
            ex = 1.0
            ey = 0.0
        bx = nax + sep * ex
        by = nay + sep * ey
        bx = min(max(bx, lo), hi)
        by = min(max(by, lo), hi)
        dx = bx - nax
        dy = by - nay
        d = np.sqrt(dx * dx + dy * dy)
        if d < sep:
            if d > 0.0:
                ex = dx / d
                ey = dy / d
            nax = bx - sep * ex
            nay = by - sep * ey
    return nax, nay, bx, by


NUMPY_IMPL = {
    "relu_fwd": _np_relu_fwd,
    "relu_bwd": _np_relu_bwd,
    "tanh_bwd": _np_tanh_bwd,
    "adam_fused": _np_adam_fused,
    "msd_loss": _np_msd_loss,
    "huber_loss": _np_huber_loss,
    "nstep_scan": _np_nstep_scan,
    "maze_step": _np_maze_step,
    "pushbox_step": _np_pushbox_step,
}


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if NUMBA_ENABLED:

    @njit(cache=True)
    def _nb_relu_fwd(x):
        out = np.empty_like(x)
        f = x.ravel()
        o = out.ravel()
        for i in range(f.size):
            o[i] = f[i] if f[i] > 0.0 else 0.0
        return out

    @njit(cache=True)
    def _nb_relu_bwd(g, x):
        out = np.empty_like(g)
        gf = g.ravel()
        xf = x.ravel()
        o = out.ravel()
        for i in range(gf.size):
            o[i] = gf[i] if xf[i] > 0.0 else 0.0
        return out

    @njit(cache=True)
    def _nb_tanh_bwd(g, y):
        out = np.empty_like(g)
        gf = g.ravel()
        yf = y.ravel()
        o = out.ravel()
        for i in range(gf.size):
            o[i] = gf[i] * (1.0 - yf[i] * yf[i])
        return out

    @njit(cache=True)
    def _nb_adam_fused(p, g, m, v, t, lr, b1, b2, eps):
        p2 = np.empty_like(p)
        m2 = np.empty_like(m)
        v2 = np.empty_like(v)
        pf, gf, mf, vf = p.ravel(), g.ravel(), m.ravel(), v.ravel()
        p2f, m2f, v2f = p2.ravel(), m2.ravel(), v2.ravel()
        c1 = 1.0 - b1 ** t
        c2 = 1.0 - b2 ** t
        for i in range(pf.size):
            mi = b1 * mf[i] + (1.0 - b1) * gf[i]
            vi = b2 * vf[i] + (1.0 - b2) * gf[i] * gf[i]
            m2f[i] = mi
            v2f[i] = vi
            p2f[i] = pf[i] - lr * (mi / c1) / (np.sqrt(vi / c2) + eps)
        return p2, m2, v2

    @njit(cache=True)
    def _nb_msd_loss(pred, target):
        grad = np.empty_like(pred)
        pf = pred.ravel()
        tf = target.ravel()
        gf = grad.ravel()
        n = pf.size
        acc = 0.0
        for i in range(n):
            e = pf[i] - tf[i]
            acc += e * e
            gf[i] = (2.0 / n) * e
        return acc / n, grad

    @njit(cache=True)
    def _nb_huber_loss(pred, target, delta):
        grad = np.empty_like(pred)
        pf = pred.ravel()
        tf = target.ravel()
        gf = grad.ravel()
        n = pf.size
        acc = 0.0
        for i in range(n):
            e = pf[i] - tf[i]
            ae = abs(e)
            if ae <= delta:
                acc += 0.5 * e * e
                gf[i] = e / n
            else:
                acc += delta * (ae - 0.5 * delta)
                gf[i] = (delta if e > 0.0 else -delta) / n
        return acc / n, grad

    @njit(cache=True)
    def _nb_nstep_scan(succ, csum):
        b, n = succ.shape
        r = np.empty(b, dtype=np.float64)
        mask = np.empty(b, dtype=np.float64)
        kstar = np.empty(b, dtype=np.int64)
        for i in range(b):
            k = n
            for j in range(n):
                if succ[i, j]:
                    k = j
                    break
            kstar[i] = k
            r[i] = -csum[k]
            mask[i] = 0.0 if k < n else 1.0
        return r, mask, kstar

    @njit(cache=True)
    def _nb_maze_step(x, y, ax, ay, scale, walls, margin):
        ax = min(max(ax, -1.0), 1.0)
        ay = min(max(ay, -1.0), 1.0)
        row = int(np.floor(y))
        nx = x + scale * ax
        col2 = int(np.floor(nx))
        if walls[row, col2]:
            if ax > 0.0:
                nx = float(col2) - margin
            else:
                nx = float(col2) + 1.0 + margin
        ny = y + scale * ay
        col = int(np.floor(nx))
        row2 = int(np.floor(ny))
        if walls[row2, col]:
            if ay > 0.0:
                ny = float(row2) - margin
            else:
                ny = float(row2) + 1.0 + margin
        return nx, ny

    @njit(cache=True)
    def _nb_pushbox_step(ax_, ay_, bx, by, ux, uy, scale, lo, hi, margin, sep):
        ux = min(max(ux, -1.0), 1.0)
        uy = min(max(uy, -1.0), 1.0)
        nax = ax_ + scale * ux
        nay = ay_ + scale * uy
        nax = min(max(nax, lo + margin), hi - margin)
        nay = min(max(nay, lo + margin), hi - margin)
        dx = bx - nax
        dy = by - nay
        d = np.sqrt(dx * dx + dy * dy)
        if d < sep:
            if d > 0.0:
                ex = dx / d
                ey = dy / d
            else:
                ex = 1.0
                ey = 0.0
            bx = nax + sep * ex
            by = nay + sep * ey
            bx = min(max(bx, lo), hi)
            by = min(max(by, lo), hi)
            dx = bx - nax
            dy = by - nay
            d = np.sqrt(dx * dx + dy * dy)
            if d < sep:
                if d > 0.0:
                    ex = dx / d
                    ey = dy / d
                nax = bx - sep * ex
                nay = by - sep * ey
        return nax, nay, bx, by

    NUMBA_IMPL = {
        "relu_fwd": _nb_relu_fwd,
        "relu_bwd": _nb_relu_bwd,
        "tanh_bwd": _nb_tanh_bwd,
        "adam_fused": _nb_adam_fused,
        "msd_loss": _nb_msd_loss,
        "huber_loss": _nb_huber_loss,
        "nstep_scan": _nb_nstep_scan,
        "maze_step": _nb_maze_step,
        "pushbox_step": _nb_pushbox_step,
    }
else:  # pragma: no cover
    NUMBA_IMPL = {}

ACTIVE_IMPL = NUMBA_IMPL if NUMBA_ENABLED else NUMPY_IMPL

relu_fwd = ACTIVE_IMPL["relu_fwd"]
relu_bwd = ACTIVE_IMPL["relu_bwd"]
tanh_bwd = ACTIVE_IMPL["tanh_bwd"]
adam_fused = ACTIVE_IMPL["adam_fused"]
msd_loss = ACTIVE_IMPL["msd_loss"]
huber_loss = ACTIVE_IMPL["huber_loss"]
nstep_scan = ACTIVE_IMPL["nstep_scan"]
maze_step = ACTIVE_IMPL["maze_step"]
pushbox_step = ACTIVE_IMPL["pushbox_step"]


def backend_name() -> str:
    return "numba" if NUMBA_ENABLED else "numpy"
