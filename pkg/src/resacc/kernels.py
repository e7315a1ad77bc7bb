"""Hot numeric kernels: direct convolution, fully-connected, max-pool.

Two interchangeable backends: numba ``@njit`` loops (default) and pure numpy.
Set ``RESACC_NO_NUMBA=1`` to force the numpy path (or when numba is missing).
``benchmarks/kernel_bench.py`` compares the two.

All kernels take and return float64. Accumulating in float64 makes the INT8
path exact (products and sums stay far below 2**53). For float inputs the
two backends can differ by a few ulps (sequential vs pairwise/BLAS summation
order), so cross-backend agreement is to tight tolerance, not bitwise; a
single run is deterministic within its backend. Casting to the storage
format happens at layer boundaries, outside these kernels.
"""

from __future__ import annotations

import os

import numpy as np

_want_numba = os.environ.get("RESACC_NO_NUMBA", "0") not in ("1", "true", "yes")

if _want_numba:
    try:
        from numba import njit

        HAVE_NUMBA = True
    except ImportError:  # pragma: no cover
        HAVE_NUMBA = False
else:
    HAVE_NUMBA = False

if not HAVE_NUMBA:

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(fn):
            return fn

        return wrap


@njit(cache=True)
def conv2d_loops(x, w, stride, pad):
    ic, ih, iw = x.shape
    oc, _, kh, kw = w.shape
    oh = (ih + 2 * pad - kh) // stride + 1
    ow = (iw + 2 * pad - kw) // stride + 1
    out = np.zeros((oc, oh, ow), dtype=np.float64)
    for o in range(oc):
        for y in range(oh):
            for z in range(ow):
                acc = 0.0
                for c in range(ic):
                    for ky in range(kh):
                        sy = y * stride - pad + ky
                        if sy < 0 or sy >= ih:
                            continue
                        for kz in range(kw):
                            sz = z * stride - pad + kz
                            if sz < 0 or sz >= iw:
                                continue
                            acc += x[c, sy, sz] * w[o, c, ky, kz]
                out[o, y, z] = acc
    return out


@njit(cache=True)
def conv2d_elem_loops(x, w, o, y, z, stride, pad):
    """Recompute a single convolution output element."""
    ic, ih, iw = x.shape
    _, _, kh, kw = w.shape
    acc = 0.0
    for c in range(ic):
        for ky in range(kh):
            sy = y * stride - pad + ky
            if sy < 0 or sy >= ih:
                continue
            for kz in range(kw):
                sz = z * stride - pad + kz
                if sz < 0 or sz >= iw:
                    continue
                acc += x[c, sy, sz] * w[o, c, ky, kz]
    return acc


@njit(cache=True)
def fc_loops(x, w):
    o, i = w.shape
    out = np.zeros(o, dtype=np.float64)
    for r in range(o):
        acc = 0.0
        for c in range(i):
            acc += w[r, c] * x[c]
        out[r] = acc
    return out


@njit(cache=True)
def fc_elem_loops(x, w, r):
    acc = 0.0
    for c in range(w.shape[1]):
        acc += w[r, c] * x[c]
    return acc


@njit(cache=True)
def maxpool2d_loops(x, kernel, stride):
    c, ih, iw = x.shape
    oh = (ih - kernel) // stride + 1
    ow = (iw - kernel) // stride + 1
    out = np.empty((c, oh, ow), dtype=np.float64)
    for ch in range(c):
        for y in range(oh):
            for z in range(ow):
                # NaN loses every comparison unless the whole window is NaN,
                # matching fmax in the numpy backend.
                best = x[ch, y * stride, z * stride]
                for ky in range(kernel):
                    for kz in range(kernel):
                        v = x[ch, y * stride + ky, z * stride + kz]
                        if v > best or best != best:
                            best = v
                out[ch, y, z] = best
    return out


# --- pure-numpy fallback ---------------------------------------------------

def _im2col(x, kh, kw, stride, pad, oh, ow):
    ic = x.shape[0]
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((ic * kh * kw, oh * ow), dtype=np.float64)
    idx = 0
    for c in range(ic):
        for ky in range(kh):
            for kz in range(kw):
                patch = x[c, ky : ky + oh * stride : stride, kz : kz + ow * stride : stride]
                cols[idx] = patch.ravel()
                idx += 1
    return cols


def conv2d_numpy(x, w, stride, pad):
    ic, ih, iw = x.shape
    oc, _, kh, kw = w.shape
    oh = (ih + 2 * pad - kh) // stride + 1
    ow = (iw + 2 * pad - kw) // stride + 1
    cols = _im2col(x, kh, kw, stride, pad, oh, ow)
    out = w.reshape(oc, -1) @ cols
    return out.reshape(oc, oh, ow)


def _conv_elem_plain(x, w, o, y, z, stride, pad):
    ic, ih, iw = x.shape
    _, _, kh, kw = w.shape
    acc = 0.0
    for c in range(ic):
        for ky in range(kh):
            sy = y * stride - pad + ky
            if sy < 0 or sy >= ih:
                continue
            for kz in range(kw):
                sz = z * stride - pad + kz
                if sz < 0 or sz >= iw:
                    continue
                acc += x[c, sy, sz] * w[o, c, ky, kz]
    return acc


def fc_numpy(x, w):
    return w @ x


def maxpool2d_numpy(x, kernel, stride):
    c, ih, iw = x.shape
    oh = (ih - kernel) // stride + 1
    ow = (iw - kernel) // stride + 1
    windows = np.empty((kernel * kernel, c, oh, ow), dtype=np.float64)
    i = 0
    for ky in range(kernel):
        for kz in range(kernel):
            windows[i] = x[:, ky : ky + oh * stride : stride, kz : kz + ow * stride : stride]
            i += 1
    return np.fmax.reduce(windows, axis=0)


if HAVE_NUMBA:
    conv2d = conv2d_loops
    conv2d_elem = conv2d_elem_loops
    fc = fc_loops
    fc_elem = fc_elem_loops
    maxpool2d = maxpool2d_loops
else:
    conv2d = conv2d_numpy
    conv2d_elem = _conv_elem_plain
    fc = fc_numpy
    fc_elem = fc_elem_loops  # undecorated python loop; fine at fallback scale
    maxpool2d = maxpool2d_numpy
