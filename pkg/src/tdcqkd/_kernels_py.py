"""Pure NumPy/Python versions of the hot kernels.

These are the reference implementations; the Cython module ``_kernels``
must agree with them bit for bit.
"""
import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_INV53 = 1.0 / (1 << 53)
CHUNK = 1 << 22


def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def seed_key(seed):
    with np.errstate(over="ignore"):
        return int(_mix(np.uint64(seed % (1 << 64)) + GOLDEN))


def counter_uniform(key, start, n):
    """Uniform doubles in [0, 1); draw ``j`` depends only on (key, j)."""
    j = np.arange(start, start + n, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = _mix(np.uint64(key) + (j + np.uint64(1)) * GOLDEN)
    return (z >> np.uint64(11)).astype(np.float64) * _INV53


def counter_normal(key, start, n):
    """Standard normals via Box-Muller on draws (2j, 2j+1)."""
    u = counter_uniform(key, 2 * start, 2 * n)
    u1, u2 = u[0::2], u[1::2]
    return np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(2.0 * np.pi * u2)


def hit_phases(key, start, n, period, mode, mean, sigma):
    if mode == 0:
        return counter_uniform(key, start, n) * period
    ph = np.fmod(mean + sigma * counter_normal(key, start, n), period)
    ph[ph < 0] += period
    # fmod can round onto the period itself
    ph[ph >= period] = 0.0
    return ph


def code_density(edges, period, key, start, stop, mode=0, mean=0.0, sigma=0.0):
    edges = np.asarray(edges, dtype=np.float64)
    counts = np.zeros(len(edges), dtype=np.int64)
    for a in range(start, stop, CHUNK):
        n = min(CHUNK, stop - a)
        ph = hit_phases(key, a, n, period, mode, mean, sigma)
        codes = np.searchsorted(edges, ph, side="right")
        counts += np.bincount(codes, minlength=len(edges))[: len(edges)]
    return counts


def match_greedy(ta, tb, half_window):
    """Greedy local-nearest-neighbour matching of two sorted timestamp arrays.

    Returns index arrays (ia, ib) of matched pairs. At each step the two
    stream heads pair up if they are within ``half_window`` and the next tag
    on the far side is not strictly closer to the later head; otherwise the
    earlier head is dropped. Ties go to the earlier tag.
    """
    ta = [int(t) for t in ta]
    tb = [int(t) for t in tb]
    na, nb = len(ta), len(tb)
    ia, ib = [], []
    i = j = 0
    while i < na and j < nb:
        a, b = ta[i], tb[j]
        d = b - a
        if d > half_window:
            i += 1
        elif -d > half_window:
            j += 1
        elif d >= 0:
            if i + 1 < na and abs(ta[i + 1] - b) < d:
                i += 1
            else:
                ia.append(i)
                ib.append(j)
                i += 1
                j += 1
        else:
            if j + 1 < nb and abs(tb[j + 1] - a) < -d:
                j += 1
            else:
                ia.append(i)
                ib.append(j)
                i += 1
                j += 1
    return np.asarray(ia, dtype=np.int64), np.asarray(ib, dtype=np.int64)
