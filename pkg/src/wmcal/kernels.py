"""Hot numeric kernels, each with a numba and a pure-numpy implementation.

The public names at the bottom of the module dispatch on ``USE_NUMBA``
(controlled by the ``WMCAL_NUMBA`` environment variable). Both variants are
kept importable through ``BACKENDS`` so they can be benchmarked and
cross-checked against each other.
"""
import numpy as np

from ._jit import USE_NUMBA, njit

# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------


def _lognormal_paths_numpy(s0, log_drift, step_std, normals):
    increments = log_drift[None, :] + step_std[None, :] * normals
    return s0 * np.exp(np.cumsum(increments, axis=1))


def _vanilla_payoffs_numpy(spots, strikes, is_call, discount):
    diff = spots[:, None] - strikes[None, :]
    sign = np.where(is_call, 1.0, -1.0)
    return discount * np.maximum(sign[None, :] * diff, 0.0)


def _window_payoffs_numpy(s1, s2, ratio, lower, upper):
    deviation = s2 * ratio - s1
    inside = (s1[:, None] >= lower[None, :]) & (s1[:, None] < upper[None, :])
    return np.where(inside, deviation[:, None], 0.0)


def _cliquet_payoffs_numpy(spots, cap, discount):
    ratios = np.minimum(spots[:, 1:] / spots[:, :-1], cap)
    return discount * np.maximum(np.prod(ratios, axis=1) - 1.0, 0.0)


def _softmax_weights_numpy(exponents):
    shift = np.max(exponents)
    w = np.exp(exponents - shift)
    total = np.sum(w)
    return w / total, shift + np.log(total)


def _weighted_moments_numpy(g, p):
    mean = p @ g
    root = (g - mean[None, :]) * np.sqrt(p)[:, None]
    cov = root.T @ root
    return mean, 0.5 * (cov + cov.T)


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------


@njit(cache=True)
def _lognormal_paths_numba(s0, log_drift, step_std, normals):
    n, m = normals.shape
    out = np.empty((n, m))
    for i in range(n):
        x = 0.0
        for k in range(m):
            x += log_drift[k] + step_std[k] * normals[i, k]
            out[i, k] = s0 * np.exp(x)
    return out


@njit(cache=True)
def _vanilla_payoffs_numba(spots, strikes, is_call, discount):
    n = spots.shape[0]
    k = strikes.shape[0]
    out = np.zeros((n, k))
    for i in range(n):
        s = spots[i]
        for j in range(k):
            if is_call[j]:
                v = s - strikes[j]
            else:
                v = strikes[j] - s
            if v > 0.0:
                out[i, j] = discount * v
    return out


@njit(cache=True)
def _window_payoffs_numba(s1, s2, ratio, lower, upper):
    # windows are sorted and disjoint, so each path lands in at most one
    n = s1.shape[0]
    w = lower.shape[0]
    out = np.zeros((n, w))
    for i in range(n):
        x = s1[i]
        j = np.searchsorted(lower, x, side="right") - 1
        if j >= 0 and x < upper[j]:
            out[i, j] = s2[i] * ratio - x
    return out


@njit(cache=True)
def _cliquet_payoffs_numba(spots, cap, discount):
    n, m = spots.shape
    out = np.empty(n)
    for i in range(n):
        prod = 1.0
        for k in range(1, m):
            r = spots[i, k] / spots[i, k - 1]
            prod *= r if r < cap else cap
        out[i] = discount * (prod - 1.0) if prod > 1.0 else 0.0
    return out


@njit(cache=True)
def _softmax_weights_numba(exponents):
    shift = exponents.max()
    n = exponents.shape[0]
    w = np.empty(n)
    total = 0.0
    for i in range(n):
        w[i] = np.exp(exponents[i] - shift)
        total += w[i]
    for i in range(n):
        w[i] /= total
    return w, shift + np.log(total)


@njit(cache=True)
def _weighted_moments_numba(g, p):
    # centred second pass: exact zeros for constant columns, PSD by construction
    n, m = g.shape
    mean = np.zeros(m)
    for i in range(n):
        for j in range(m):
            mean[j] += p[i] * g[i, j]
    root = np.empty((n, m))
    for i in range(n):
        sp = np.sqrt(p[i])
        for j in range(m):
            root[i, j] = sp * (g[i, j] - mean[j])
    cov = root.T @ root
    for a in range(m):
        for b in range(a + 1, m):
            c = 0.5 * (cov[a, b] + cov[b, a])
            cov[a, b] = c
            cov[b, a] = c
    return mean, cov


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

BACKENDS = {
    "numpy": {
        "lognormal_paths": _lognormal_paths_numpy,
        "vanilla_payoffs": _vanilla_payoffs_numpy,
        "window_payoffs": _window_payoffs_numpy,
        "cliquet_payoffs": _cliquet_payoffs_numpy,
        "softmax_weights": _softmax_weights_numpy,
        "weighted_moments": _weighted_moments_numpy,
    },
    "numba": {
        "lognormal_paths": _lognormal_paths_numba,
        "vanilla_payoffs": _vanilla_payoffs_numba,
        "window_payoffs": _window_payoffs_numba,
        "cliquet_payoffs": _cliquet_payoffs_numba,
        "softmax_weights": _softmax_weights_numba,
        "weighted_moments": _weighted_moments_numba,
    },
}

ACTIVE_BACKEND = "numba" if USE_NUMBA else "numpy"
_active = BACKENDS[ACTIVE_BACKEND]


def lognormal_paths(s0, log_drift, step_std, normals):
    """Spot levels ``s0 * exp(cumsum(drift + std * z))`` along each row."""
    return _active["lognormal_paths"](
        float(s0),
        np.ascontiguousarray(log_drift, dtype=np.float64),
        np.ascontiguousarray(step_std, dtype=np.float64),
        np.ascontiguousarray(normals, dtype=np.float64),
    )


def vanilla_payoffs(spots, strikes, is_call, discount):
    """Discounted call/put payoffs, one column per strike."""
    return _active["vanilla_payoffs"](
        np.ascontiguousarray(spots, dtype=np.float64),
        np.ascontiguousarray(strikes, dtype=np.float64),
        np.ascontiguousarray(is_call, dtype=np.bool_),
        float(discount),
    )


def window_payoffs(s1, s2, ratio, lower, upper):
    """``(s2 * ratio - s1) * 1{lower <= s1 < upper}``, one column per window.

    Windows must be sorted ascending and disjoint.
    """
    return _active["window_payoffs"](
        np.ascontiguousarray(s1, dtype=np.float64),
        np.ascontiguousarray(s2, dtype=np.float64),
        float(ratio),
        np.ascontiguousarray(lower, dtype=np.float64),
        np.ascontiguousarray(upper, dtype=np.float64),
    )


def cliquet_payoffs(spots, cap, discount):
    """Discounted ``max(0, prod(min(S_k / S_{k-1}, cap)) - 1)`` per row."""
    return _active["cliquet_payoffs"](
        np.ascontiguousarray(spots, dtype=np.float64), float(cap), float(discount)
    )


def softmax_weights(exponents):
    """Normalized ``exp(exponents)`` and its log-normalizer, shift-stabilized."""
    return _active["softmax_weights"](np.ascontiguousarray(exponents, dtype=np.float64))


def weighted_moments(g, p):
    """Probability-weighted column means and covariance matrix of ``g``."""
    return _active["weighted_moments"](
        np.ascontiguousarray(g, dtype=np.float64),
        np.ascontiguousarray(p, dtype=np.float64),
    )
