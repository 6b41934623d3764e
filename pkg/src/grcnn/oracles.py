"""Slow, direct reference computations used to cross-check the fast paths.

Nothing here touches the autodiff engine: inputs and outputs are plain
numpy arrays.
"""
from __future__ import annotations

from typing import Callable, List, Sequence

import numpy as np


def direct_conv2d(x: np.ndarray, weight: np.ndarray, bias=None, stride=(1, 1), padding=(0, 0),
                  groups: int = 1) -> np.ndarray:
    """Grouped convolution as an explicit six-deep nested sum."""
    n, c_in, h, w = x.shape
    c_out, cg, kh, kw = weight.shape
    sh, sw = stride
    ph, pw = padding
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (w + 2 * pw - kw) // sw + 1
    og = c_out // groups
    out = np.zeros((n, c_out, ho, wo), dtype=np.float64)
    for b in range(n):
        for co in range(c_out):
            grp = co // og
            for oy in range(ho):
                for ox in range(wo):
                    acc = 0.0 if bias is None else float(bias[co])
                    for ci in range(cg):
                        src = grp * cg + ci
                        for ky in range(kh):
                            iy = oy * sh + ky - ph
                            if iy < 0 or iy >= h:
                                continue
                            for kx in range(kw):
                                ix = ox * sw + kx - pw
                                if 0 <= ix < w:
                                    acc += float(weight[co, ci, ky, kx]) * float(x[b, src, iy, ix])
                    out[b, co, oy, ox] = acc
    return out


def depthwise_conv2d(x: np.ndarray, weight: np.ndarray, padding=(0, 0)) -> np.ndarray:
    """groups == C: every channel filtered by its own kernel (stride 1)."""
    n, c, h, w = x.shape
    _, _, kh, kw = weight.shape
    ph, pw = padding
    xp = np.pad(x.astype(np.float64), ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    ho, wo = h + 2 * ph - kh + 1, w + 2 * pw - kw + 1
    out = np.zeros((n, c, ho, wo))
    for ch in range(c):
        for ky in range(kh):
            for kx in range(kw):
                out[:, ch] += weight[ch, 0, ky, kx] * xp[:, ch, ky:ky + ho, kx:kx + wo]
    return out


def accumulate_partial_sums(feedforward: np.ndarray, gate_fn: Callable[[int, np.ndarray], np.ndarray],
                            recurrent_fn: Callable[[int, np.ndarray], np.ndarray], iterations: int) -> List[np.ndarray]:
    """States of the accumulating gated recurrence, built from explicit sums.

    Every state ``x(t)`` for ``t >= 1`` is recomputed from scratch as
    ``F + sum_{n=1..t} G(n) * R_n(x(n-1))`` using the stored step terms.
    Returns ``[x(0), ..., x(T-1)]``.
    """
    states = [feedforward]
    terms = []
    for n in range(1, iterations):
        prev = states[n - 1]
        terms.append(gate_fn(n, prev) * recurrent_fn(n, prev))
        partial = np.zeros_like(feedforward)
        for term in terms:
            partial = partial + term
        states.append(feedforward + partial)
    return states


def perturbation_support(fn: Callable[[np.ndarray], float], x: np.ndarray, delta: float = 1e-3) -> np.ndarray:
    """Boolean (H, W) map of input pixels whose perturbation changes ``fn``.

    Each pixel is bumped in every channel (one channel at a time) in both
    directions; a pixel is in the support if any bump moves the output.
    """
    base = fn(x)
    _, c, h, w = x.shape
    support = np.zeros((h, w), dtype=bool)
    for i in range(h):
        for j in range(w):
            for ch in range(c):
                hit = False
                for sgn in (1.0, -1.0):
                    xp = x.copy()
                    xp[0, ch, i, j] += sgn * delta
                    if fn(xp) != base:
                        hit = True
                        break
                if hit:
                    support[i, j] = True
                    break
    return support


def rcl_support_side(kernel: int, steps: int) -> int:
    """Side length of the geometric RF after ``steps`` recurrent convolutions
    of a ``kernel x kernel`` feedforward conv (stride 1)."""
    return kernel + steps * (kernel - 1)


def support_bbox(mask: np.ndarray) -> Sequence[int]:
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        return (0, 0)
    return (int(ys.max() - ys.min() + 1), int(xs.max() - xs.min() + 1))
