"""Dense feature-map substrate: bilinear sampling, upsampling, gradient checks.

A feature map is a float64 ndarray of shape ``(channels, height, width)``.
All resampling uses the align-corners convention: stored grid point ``i``
sits at pixel coordinate ``i``, and a resize maps the first and last grid
points of input and output onto each other.  Out-of-range coordinates are
clamped to the border before interpolation.

Every resampler here is separable, so it is expressed as a pair of
interpolation matrices ``(Ry, Rx)`` acting as ``Ry @ F[c] @ Rx.T``.  The
backward pass is then just the transposed product.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

__all__ = [
    "as_feature_map",
    "interp_weights",
    "interp_matrix",
    "bilinear_sample",
    "bilinear_sample_backward",
    "upsample_matrix",
    "upsample_bilinear",
    "upsample_bilinear_backward",
    "GradCheckReport",
    "numerical_gradient",
    "finite_diff_check",
]


def as_feature_map(data, copy: bool = False) -> np.ndarray:
    """Validate and return ``data`` as a float64 ``(C, H, W)`` array."""
    arr = np.array(data, dtype=np.float64, copy=copy)
    if arr.ndim != 3:
        raise ValueError(f"feature map must be rank 3 (C, H, W), got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ValueError(f"feature map dimensions must be >= 1, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("feature map contains non-finite values")
    return arr


def interp_weights(coords, size: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """1-D linear interpolation stencil for ``coords`` on a grid of ``size`` points.

    Returns ``(i0, i1, w0, w1)`` such that the interpolated value of a signal
    ``g`` is ``w0 * g[i0] + w1 * g[i1]``.  Coordinates are clamped to
    ``[0, size - 1]`` first.
    """
    c = np.clip(np.asarray(coords, dtype=np.float64), 0.0, size - 1)
    i0 = np.floor(c).astype(np.intp)
    i0 = np.minimum(i0, size - 1)
    i1 = np.minimum(i0 + 1, size - 1)
    w1 = c - i0
    w0 = 1.0 - w1
    return i0, i1, w0, w1


def interp_matrix(coords, size: int) -> np.ndarray:
    """Dense interpolation matrix of shape ``coords.shape + (size,)``.

    Row ``r`` holds the two linear-interpolation weights for ``coords[r]``.
    Leading dimensions of ``coords`` are preserved, so a ``(B, n)`` batch of
    sample positions yields a ``(B, n, size)`` stack of matrices.
    """
    i0, i1, w0, w1 = interp_weights(coords, size)
    mat = np.zeros(i0.shape + (size,), dtype=np.float64)
    np.put_along_axis(mat, i0[..., None], w0[..., None], axis=-1)
    # i1 may equal i0 at the far border; accumulate instead of overwrite
    cur = np.take_along_axis(mat, i1[..., None], axis=-1)
    np.put_along_axis(mat, i1[..., None], cur + w1[..., None], axis=-1)
    return mat


def _check_channel(shape, c: int) -> None:
    if not 0 <= c < shape[0]:
        raise ValueError(f"channel index {c} out of range for {shape[0]} channels")


def bilinear_sample(fmap: np.ndarray, c: int, x: float, y: float) -> float:
    """Bilinearly interpolate channel ``c`` of ``fmap`` at pixel ``(x, y)``."""
    fmap = np.asarray(fmap, dtype=np.float64)
    _check_channel(fmap.shape, c)
    _, h, w = fmap.shape
    y0, y1, wy0, wy1 = interp_weights(y, h)
    x0, x1, wx0, wx1 = interp_weights(x, w)
    g = fmap[c]
    return float(
        wy0 * (wx0 * g[y0, x0] + wx1 * g[y0, x1]) + wy1 * (wx0 * g[y1, x0] + wx1 * g[y1, x1])
    )


def bilinear_sample_backward(
    shape, c: int, x: float, y: float, grad: float = 1.0, out: Optional[np.ndarray] = None
) -> np.ndarray:
    """Accumulate ``grad * d bilinear_sample / d fmap`` into ``out``.

    ``out`` is allocated zero-filled when omitted.  Gradient flows only to
    the map values; the sampling position is treated as a constant.
    """
    shape = tuple(shape)
    _check_channel(shape, c)
    if out is None:
        out = np.zeros(shape, dtype=np.float64)
    _, h, w = shape
    y0, y1, wy0, wy1 = interp_weights(y, h)
    x0, x1, wx0, wx1 = interp_weights(x, w)
    out[c, y0, x0] += grad * wy0 * wx0
    out[c, y0, x1] += grad * wy0 * wx1
    out[c, y1, x0] += grad * wy1 * wx0
    out[c, y1, x1] += grad * wy1 * wx1
    return out


def upsample_matrix(size: int, factor: int) -> np.ndarray:
    """``(factor * size, size)`` align-corners upsampling matrix."""
    if factor < 1:
        raise ValueError(f"upsample factor must be >= 1, got {factor}")
    n = factor * size
    if factor == 1:
        return np.eye(size)
    if size == 1:
        return np.ones((n, 1))
    coords = np.arange(n) * (size - 1) / (n - 1)
    return interp_matrix(coords, size)


def upsample_bilinear(fmap: np.ndarray, factor: int) -> np.ndarray:
    """Resize ``fmap`` to ``(C, factor*H, factor*W)`` with align-corners bilinear."""
    if int(factor) != factor or factor < 1:
        raise ValueError(f"upsample factor must be a positive integer, got {factor}")
    fmap = np.asarray(fmap, dtype=np.float64)
    if factor == 1:
        return fmap.copy()
    _, h, w = fmap.shape
    uy = upsample_matrix(h, factor)
    ux = upsample_matrix(w, factor)
    return uy @ fmap @ ux.T


def upsample_bilinear_backward(grad_up: np.ndarray, factor: int) -> np.ndarray:
    """Gradient of :func:`upsample_bilinear` w.r.t. its input map."""
    grad_up = np.asarray(grad_up, dtype=np.float64)
    if factor == 1:
        return grad_up.copy()
    _, hu, wu = grad_up.shape
    uy = upsample_matrix(hu // factor, factor)
    ux = upsample_matrix(wu // factor, factor)
    return uy.T @ grad_up @ ux


@dataclass
class GradCheckReport:
    """Outcome of a finite-difference gradient comparison."""

    passed: bool
    max_abs_err: float
    max_rel_err: float
    worst_index: Optional[tuple]
    n_checked: int
    message: str = ""

    def __bool__(self) -> bool:
        return self.passed

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        text = (
            f"{status}: checked {self.n_checked} entries, "
            f"max abs err {self.max_abs_err:.3e}, max rel err {self.max_rel_err:.3e}"
        )
        if self.message:
            text += f" ({self.message})"
        return text


def numerical_gradient(
    f: Callable[[np.ndarray], float], x: np.ndarray, step: float = 1e-6, indices=None, stencil: int = 3
) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x`` (any shape).

    ``stencil=3`` is the usual ``(f(x+h) - f(x-h)) / 2h`` with O(h^2) error;
    ``stencil=5`` adds the ``x +- 2h`` points for O(h^4) error.  ``indices``
    restricts the work to those flat positions; the others are left at zero.
    """
    if stencil not in (3, 5):
        raise ValueError(f"stencil must be 3 or 5, got {stencil}")
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size) if indices is None else indices:
        orig = flat[i]

        def at(offset):
            flat[i] = orig + offset
            return float(f(x))

        d1 = at(step) - at(-step)
        if stencil == 3:
            gflat[i] = d1 / (2.0 * step)
        else:
            d2 = at(2 * step) - at(-2 * step)
            gflat[i] = (8.0 * d1 - d2) / (12.0 * step)
        flat[i] = orig
    return grad


def finite_diff_check(
    f: Callable[[np.ndarray], float],
    x: np.ndarray,
    analytic_grad: np.ndarray,
    step: float = 1e-6,
    tol: float = 1e-6,
    abs_floor: float = 1e-6,
    max_entries: Optional[int] = None,
    seed: int = 0,
    stencil: int = 3,
) -> GradCheckReport:
    """Compare ``analytic_grad`` with central differences of ``f`` at ``x``.

    The relative error of entry ``i`` is
    ``|a_i - n_i| / max(|a_i|, |n_i|, abs_floor)``; entries whose magnitude is
    below ``abs_floor`` are therefore compared in absolute terms.  The check
    passes when the worst relative error is ``<= tol``.  ``x`` is not
    modified.

    ``max_entries`` checks a random subset (drawn with ``seed``) instead of
    every entry, for inputs too large to perturb one by one.  ``stencil``
    selects the 3- or 5-point central difference (see
    :func:`numerical_gradient`).
    """
    if step <= 0 or tol <= 0:
        raise ValueError("step and tol must be positive")
    x = np.array(x, dtype=np.float64)
    analytic = np.asarray(analytic_grad, dtype=np.float64)
    if analytic.shape != x.shape:
        raise ValueError(f"gradient shape {analytic.shape} does not match input shape {x.shape}")

    nonfinite = []

    def guarded(v):
        out = float(f(v))
        if not np.isfinite(out):
            nonfinite.append(out)
        return out

    indices = None
    if max_entries is not None and max_entries < x.size:
        indices = np.sort(np.random.default_rng(seed).choice(x.size, size=max_entries, replace=False))
    numeric = numerical_gradient(guarded, x, step, indices, stencil)
    if nonfinite or not np.all(np.isfinite(analytic)):
        return GradCheckReport(False, np.inf, np.inf, None, x.size, "non-finite function value or gradient")

    if x.size == 0:
        return GradCheckReport(True, 0.0, 0.0, None, 0)
    sel = np.arange(x.size) if indices is None else indices
    a = analytic.reshape(-1)[sel]
    n = numeric.reshape(-1)[sel]
    abs_err = np.abs(a - n)
    rel_err = abs_err / np.maximum(np.maximum(np.abs(a), np.abs(n)), abs_floor)
    k = int(np.argmax(rel_err))
    worst = np.unravel_index(int(sel[k]), x.shape)
    return GradCheckReport(
        passed=bool(rel_err[k] <= tol),
        max_abs_err=float(abs_err.max()),
        max_rel_err=float(rel_err[k]),
        worst_index=tuple(int(i) for i in worst),
        n_checked=len(sel),
    )
