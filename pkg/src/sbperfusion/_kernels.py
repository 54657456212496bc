"""Hot inner loops: ring-averaged inverse distances and point potentials.

Each kernel exists twice, a numba version and a vectorised numpy version.
The public names dispatch on :data:`sbperfusion._accel.BACKEND`. Both paths
sum in the same fixed order per output entry so results do not depend on
how work is split.
"""

import numpy as np

from ._accel import BACKEND

_CHUNK = 256


def ring_mean_inv_dist_numpy(center, e1, e2, r, src, cos_t, sin_t):
    ring = center[None, :] + r * (cos_t[:, None] * e1[None, :] + sin_t[:, None] * e2[None, :])
    out = np.empty(src.shape[0])
    for start in range(0, src.shape[0], 4096):
        block = src[start:start + 4096]
        dx = ring[None, :, 0] - block[:, 0, None]
        dy = ring[None, :, 1] - block[:, 1, None]
        dz = ring[None, :, 2] - block[:, 2, None]
        out[start:start + 4096] = np.mean(1.0 / np.sqrt(dx * dx + dy * dy + dz * dz), axis=1)
    return out


def potential_and_gradient_numpy(targets, src, weights):
    pot = np.empty(targets.shape[0])
    grad = np.empty((targets.shape[0], 3))
    for start in range(0, targets.shape[0], _CHUNK):
        x = targets[start:start + _CHUNK]
        d = x[:, None, :] - src[None, :, :]
        inv = 1.0 / np.sqrt(np.einsum("pmk,pmk->pm", d, d))
        pot[start:start + _CHUNK] = inv @ weights
        grad[start:start + _CHUNK] = -np.einsum("pm,pmk->pk", inv ** 3 * weights, d)
    return pot, grad


def potential_numpy(targets, src, weights):
    pot = np.empty(targets.shape[0])
    for start in range(0, targets.shape[0], _CHUNK):
        x = targets[start:start + _CHUNK]
        d = x[:, None, :] - src[None, :, :]
        pot[start:start + _CHUNK] = (1.0 / np.sqrt(np.einsum("pmk,pmk->pm", d, d))) @ weights
    return pot


try:
    import numba as _nb
except ImportError:  # pragma: no cover - exercised only without numba
    _nb = None


if _nb is not None:

    @_nb.njit(cache=True, fastmath=False)
    def ring_mean_inv_dist_numba(center, e1, e2, r, src, cos_t, sin_t):
        n_theta = cos_t.shape[0]
        ring = np.empty((n_theta, 3))
        for k in range(n_theta):
            for c in range(3):
                ring[k, c] = center[c] + r * (cos_t[k] * e1[c] + sin_t[k] * e2[c])
        out = np.empty(src.shape[0])
        for m in range(src.shape[0]):
            acc = 0.0
            for k in range(n_theta):
                dx = ring[k, 0] - src[m, 0]
                dy = ring[k, 1] - src[m, 1]
                dz = ring[k, 2] - src[m, 2]
                acc += 1.0 / np.sqrt(dx * dx + dy * dy + dz * dz)
            out[m] = acc / n_theta
        return out

    @_nb.njit(cache=True, fastmath=False)
    def potential_and_gradient_numba(targets, src, weights):
        n = targets.shape[0]
        pot = np.zeros(n)
        grad = np.zeros((n, 3))
        for p in range(n):
            acc = 0.0
            gx = 0.0
            gy = 0.0
            gz = 0.0
            for m in range(src.shape[0]):
                dx = targets[p, 0] - src[m, 0]
                dy = targets[p, 1] - src[m, 1]
                dz = targets[p, 2] - src[m, 2]
                inv = 1.0 / np.sqrt(dx * dx + dy * dy + dz * dz)
                acc += weights[m] * inv
                c = weights[m] * inv * inv * inv
                gx -= c * dx
                gy -= c * dy
                gz -= c * dz
            pot[p] = acc
            grad[p, 0] = gx
            grad[p, 1] = gy
            grad[p, 2] = gz
        return pot, grad

    @_nb.njit(cache=True, fastmath=False)
    def potential_numba(targets, src, weights):
        n = targets.shape[0]
        pot = np.zeros(n)
        for p in range(n):
            acc = 0.0
            for m in range(src.shape[0]):
                dx = targets[p, 0] - src[m, 0]
                dy = targets[p, 1] - src[m, 1]
                dz = targets[p, 2] - src[m, 2]
                acc += weights[m] / np.sqrt(dx * dx + dy * dy + dz * dz)
            pot[p] = acc
        return pot

else:  # pragma: no cover
    ring_mean_inv_dist_numba = None
    potential_and_gradient_numba = None
    potential_numba = None


def _contiguous(*arrays):
    return [np.ascontiguousarray(a, dtype=np.float64) for a in arrays]


def ring_mean_inv_dist(center, e1, e2, r, src, cos_t, sin_t, backend=None):
    """Trapezoid mean over theta of ``1/|center + r e_r(theta) - src_m|`` for every source."""
    backend = backend or BACKEND
    center, e1, e2, src, cos_t, sin_t = _contiguous(center, e1, e2, src, cos_t, sin_t)
    if backend == "numba" and ring_mean_inv_dist_numba is not None:
        return ring_mean_inv_dist_numba(center, e1, e2, float(r), src, cos_t, sin_t)
    return ring_mean_inv_dist_numpy(center, e1, e2, float(r), src, cos_t, sin_t)


def potential_and_gradient(targets, src, weights, backend=None):
    """Weighted sums of ``1/|x-y|`` and of its x-gradient over sources, per target."""
    backend = backend or BACKEND
    targets, src, weights = _contiguous(targets, src, weights)
    if backend == "numba" and potential_and_gradient_numba is not None:
        return potential_and_gradient_numba(targets, src, weights)
    return potential_and_gradient_numpy(targets, src, weights)


def potential(targets, src, weights, backend=None):
    backend = backend or BACKEND
    targets, src, weights = _contiguous(targets, src, weights)
    if backend == "numba" and potential_numba is not None:
        return potential_numba(targets, src, weights)
    return potential_numpy(targets, src, weights)
