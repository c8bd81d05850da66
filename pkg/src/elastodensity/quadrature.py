"""Composite Simpson quadrature on ray samples.

Nodes are the integrator's samples: uniform spacing except the final,
bisection-cut step.  Consecutive interval pairs use the uneven-spacing
Simpson rule.  With an odd number of intervals the last one is closed with
the integral of the quadratic through the last three nodes, so the rule
keeps fourth order (a trapezoid closure would drop it to third).
"""
import numpy as np


def _pair_weights(h0, h1):
    hs = h0 + h1
    return (hs / 6 * (2 - h1 / h0), hs / 6 * hs * hs / (h0 * h1), hs / 6 * (2 - h0 / h1))


def _tail_weights(h0, h1):
    # integral over the last interval (length h1) of the quadratic through nodes spaced h0, h1
    hs = h0 + h1
    return (-h1**3 / (6 * h0 * hs), (h1 * h1 + 3 * h0 * h1) / (6 * h0), (2 * h1 * h1 + 3 * h0 * h1) / (6 * hs))


def cumulative_integral(values, ds):
    """Running integral from the first node to every node; shape of ``values``.

    ``values`` has shape ``(N, ...)``; ``ds`` has length ``N - 1``.
    """
    f = np.asarray(values)
    ds = np.asarray(ds, dtype=float)
    n = len(ds)
    if len(f) != n + 1:
        raise ValueError("values and ds lengths do not match")
    extra = (1,) * (f.ndim - 1)
    out = np.zeros_like(f, dtype=np.result_type(f, float))
    if n == 0:
        return out
    if n == 1:
        out[1] = 0.5 * ds[0] * (f[0] + f[1])
        return out
    h0, h1 = ds[0:n - 1:2], ds[1:n:2]
    w0, w1, w2 = (w.reshape((-1,) + extra) for w in _pair_weights(h0, h1))
    npair = len(h1)
    pairs = w0 * f[0:2 * npair:2] + w1 * f[1:2 * npair + 1:2] + w2 * f[2:2 * npair + 1:2]
    out[2:2 * npair + 1:2] = np.cumsum(pairs, axis=0)
    # node 1: quadratic through the first three nodes, integrated over the first interval;
    # odd nodes k >= 3: even node k-1 plus the quadratic tail on [s_{k-1}, s_k]
    far, mid, near = _tail_weights(ds[1], ds[0])
    out[1] = near * f[0] + mid * f[1] + far * f[2]
    k = np.arange(3, n + 1, 2)
    if len(k):
        t0, t1, t2 = (w.reshape((-1,) + extra) for w in _tail_weights(ds[k - 2], ds[k - 1]))
        out[k] = out[k - 1] + t0 * f[k - 2] + t1 * f[k - 1] + t2 * f[k]
    return out


def path_integral(values, ds):
    """Integral over the whole path; the last entry of :func:`cumulative_integral`."""
    return cumulative_integral(values, ds)[-1]


def quadrature_weights(ds):
    """Node weights w with ``w @ values == path_integral(values, ds)`` up to rounding."""
    ds = np.asarray(ds, dtype=float)
    n = len(ds)
    w = np.zeros(n + 1)
    if n == 0:
        return w
    if n == 1:
        w[:] = 0.5 * ds[0]
        return w
    npair = n // 2
    h0, h1 = ds[0:2 * npair:2], ds[1:2 * npair:2]
    a, b, c = _pair_weights(h0, h1)
    np.add.at(w, np.arange(0, 2 * npair, 2), a)
    np.add.at(w, np.arange(1, 2 * npair, 2), b)
    np.add.at(w, np.arange(2, 2 * npair + 1, 2), c)
    if n % 2:
        t0, t1, t2 = _tail_weights(ds[n - 2], ds[n - 1])
        w[n - 2] += t0
        w[n - 1] += t1
        w[n] += t2
    return w
