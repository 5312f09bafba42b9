"""Numba kernel that rasterises one synthetic fundus image."""
from numba import njit


@njit(cache=True)
def render_fundus_nb(out, cy, cx, radius, background, blob_y, blob_x, blob_r, blob_value, noise):
    """Draw a disc with circular blobs, add noise and clamp to [0, 1].

    Args:
        out: (H, W, C) float32 buffer, overwritten.
        cy, cx, radius: disc centre and radius in pixels.
        background: disc intensity (outside the disc is 0).
        blob_y, blob_x, blob_r: blob centres and radii, one entry per blob.
        blob_value: intensity inside every blob.
        noise: (H, W, C) additive noise.
    """
    h, w, c = out.shape
    r2 = radius * radius
    for y in range(h):
        for x in range(w):
            dy = y - cy
            dx = x - cx
            v = 0.0
            if dy * dy + dx * dx <= r2:
                v = background
                for b in range(blob_y.shape[0]):
                    by = y - blob_y[b]
                    bx = x - blob_x[b]
                    if by * by + bx * bx <= blob_r[b] * blob_r[b]:
                        v = blob_value
                        break
            for ch in range(c):
                p = v + noise[y, x, ch]
                if p < 0.0:
                    p = 0.0
                elif p > 1.0:
                    p = 1.0
                out[y, x, ch] = p
    return out
