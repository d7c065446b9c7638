"""Face blurring applied to decoded pixels before an image leaves the
machine. Detection is the backend's job; this module only smears the
reported boxes."""

import numpy as np


def _box_filter(region, axis, radius):
    """Moving average of odd width along axis, edge-padded, same length."""
    n = region.shape[axis]
    kernel = 2 * min(radius, (n - 1) // 2) + 1  # odd, <= n
    if kernel < 3:
        return region
    half = kernel // 2
    pad = [(0, 0)] * region.ndim
    pad[axis] = (half, half)
    padded = np.pad(region, pad, mode="edge")
    zero_shape = list(padded.shape)
    zero_shape[axis] = 1
    csum = np.concatenate([np.zeros(zero_shape), np.cumsum(padded, axis=axis)],
                          axis=axis)
    upper = np.take(csum, range(kernel, padded.shape[axis] + 1), axis=axis)
    lower = np.take(csum, range(0, padded.shape[axis] - kernel + 1), axis=axis)
    return (upper - lower) / kernel


def box_blur_regions(pixels, boxes, radius=8):
    """Blur axis-aligned regions of an (H, W) or (H, W, C) pixel array.

    boxes: iterable of (top, left, bottom, right), half-open, clipped to the
    image bounds. Returns a new array; the input is not modified.
    """
    img = np.asarray(pixels)
    if img.ndim not in (2, 3):
        raise ValueError(f"expected 2-d or 3-d pixel array, got shape {img.shape}")
    if radius < 1:
        raise ValueError("radius must be >= 1")
    out = img.astype(np.float64, copy=True)
    h, w = img.shape[:2]
    for top, left, bottom, right in boxes:
        top, left = max(0, int(top)), max(0, int(left))
        bottom, right = min(h, int(bottom)), min(w, int(right))
        if top >= bottom or left >= right:
            continue
        region = out[top:bottom, left:right]
        region = _box_filter(region, 0, radius)
        region = _box_filter(region, 1, radius)
        out[top:bottom, left:right] = region
    if np.issubdtype(img.dtype, np.integer):
        return np.clip(np.rint(out), 0, 255).astype(img.dtype)
    return out.astype(img.dtype)
