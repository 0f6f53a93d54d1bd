"""Independent oracles shared by unit and acceptance tests.

These deliberately avoid the library's own code paths: the Savitzky-Golay
oracle fits each window with a fresh least-squares solve, the
nearest-neighbor oracle scans distances exhaustively, and the gradient
oracle is plain central differencing.
"""

import numpy as np


def savgol_oracle(channel: np.ndarray, window: int, polyorder: int) -> np.ndarray:
    """Per-window least-squares polynomial fit, evaluated per output index.

    Interior index i: fit on [i-h, i+h], evaluate at the center.  The first
    and last h indices: fit on the first/last full window and evaluate at
    the off-center position.
    """
    channel = np.asarray(channel, dtype=np.float64)
    n = channel.size
    h = window // 2
    grid = np.arange(window) - h  # local window coordinates
    out = np.empty(n)
    for i in range(n):
        if i < h:
            lo = 0
        elif i > n - 1 - h:
            lo = n - window
        else:
            lo = i - h
        pos = i - lo - h  # position in local window coordinates
        coeffs = np.polynomial.polynomial.polyfit(grid, channel[lo:lo + window], polyorder)
        out[i] = np.polynomial.polynomial.polyval(pos, coeffs)
    return out


def savgol_oracle_fast(channel: np.ndarray, window: int, polyorder: int) -> np.ndarray:
    """Vectorized form of savgol_oracle (one lstsq with many right-hand sides)."""
    channel = np.asarray(channel, dtype=np.float64)
    n = channel.size
    h = window // 2
    grid = np.arange(window, dtype=np.float64) - h
    windows = np.lib.stride_tricks.sliding_window_view(channel, window)  # [n-2h, w]
    coeffs = np.polynomial.polynomial.polyfit(grid, windows.T, polyorder)  # [deg+1, n-2h]
    out = np.empty(n)
    out[h:n - h] = coeffs[0]  # value at local 0 = constant coefficient
    first = np.polynomial.polynomial.polyfit(grid, channel[:window], polyorder)
    last = np.polynomial.polynomial.polyfit(grid, channel[n - window:], polyorder)
    for i in range(h):
        out[i] = np.polynomial.polynomial.polyval(i - h, first)
        out[n - 1 - i] = np.polynomial.polynomial.polyval(h - i, last)
    return out


def nearest_observed_oracle(channel: np.ndarray) -> np.ndarray:
    """Brute-force nearest-index fill with ties to the earlier index."""
    channel = np.asarray(channel, dtype=np.float64)
    observed = [i for i in range(channel.size) if not np.isnan(channel[i])]
    assert observed, "oracle needs at least one observation"
    out = channel.copy()
    for i in range(channel.size):
        if np.isnan(channel[i]):
            best = min(observed, key=lambda j: (abs(j - i), j))
            out[i] = channel[best]
    return out


def central_difference(fn, array: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """d fn / d array by central differences, one entry at a time."""
    grad = np.zeros_like(array)
    flat = array.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn()
        flat[i] = orig - h
        fm = fn()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def collapse_runs(labels) -> list:
    """Distinct-label sequence after run-length collapsing."""
    out = []
    for lab in labels:
        if not out or out[-1] != lab:
            out.append(int(lab))
    return out


def is_subsequence(short, long) -> bool:
    it = iter(long)
    return all(any(x == y for y in it) for x in short)
