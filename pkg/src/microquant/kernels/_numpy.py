"""Pure numpy backend. Reference for the numba kernels and fallback when
numba is unavailable or disabled."""
import numpy as np

_BLOCK = 1024
SHIFT = 16


def pair_sums(ax, ay, bx, by, radii, width, height, translation, same):
    """Cumulative weighted pair counts.

    Returns ``S`` with ``S[k] = sum over pairs (i, j) of I(d_ij < radii[k]) * e_ij``
    where ``e_ij`` is the translation edge weight (or 1). With ``same`` the two
    point sets are identical and the i == j terms are skipped. ``radii`` must be
    ascending.
    """
    radii = np.asarray(radii, dtype=np.float64)
    nr = radii.shape[0]
    hist = np.zeros(nr + 1, dtype=np.float64)
    if nr == 0 or len(ax) == 0 or len(bx) == 0:
        return np.zeros(nr)
    area = width * height
    for start in range(0, len(ax), _BLOCK):
        stop = min(start + _BLOCK, len(ax))
        dx = np.abs(ax[start:stop, None] - bx[None, :])
        dy = np.abs(ay[start:stop, None] - by[None, :])
        d = np.sqrt(dx * dx + dy * dy)
        idx = np.searchsorted(radii, d, side="right")
        if same:
            rows = np.arange(start, stop)
            idx[rows - start, rows] = nr
        keep = idx < nr
        if translation:
            w = area / ((width - dx[keep]) * (height - dy[keep]))
        else:
            w = None
        hist += np.bincount(idx[keep], weights=w, minlength=nr + 1)
    return np.cumsum(hist[:nr])


def _round(v):
    return np.floor(v + 0.5)


def hough_ppht(mask, order, cos_t, sin_t, numrho, threshold, line_length, line_gap):
    """Progressive probabilistic Hough transform.

    ``mask`` is a (H, W) uint8 foreground raster, ``order`` the visiting order
    of foreground pixels as flat indices, ``cos_t``/``sin_t`` the angle tables
    already divided by the rho resolution. Returns an (n, 4) int array of
    segments ``x1, y1, x2, y2``.
    """
    h, w = mask.shape
    m = mask.astype(np.uint8).copy()
    voted = np.zeros((h, w), dtype=np.uint8)
    nang = cos_t.shape[0]
    acc = np.zeros((nang, numrho), dtype=np.int64)
    ang_idx = np.arange(nang)
    offset = (numrho - 1) // 2
    lines = []

    def bins(x, y):
        return _round(x * cos_t + y * sin_t).astype(np.int64) + offset

    for flat in order:
        i, j = divmod(int(flat), w)
        if not m[i, j]:
            continue
        r = bins(j, i)
        acc[ang_idx, r] += 1
        voted[i, j] = 1
        vals = acc[ang_idx, r]
        max_n = int(np.argmax(vals))
        if vals[max_n] < threshold:
            continue

        a = -sin_t[max_n]
        b = cos_t[max_n]
        x0, y0 = j, i
        if abs(a) > abs(b):
            xflag = True
            dx0 = 1 if a > 0 else -1
            dy0 = int(_round(b * (1 << SHIFT) / abs(a)))
            y0 = (y0 << SHIFT) + (1 << (SHIFT - 1))
        else:
            xflag = False
            dy0 = 1 if b > 0 else -1
            dx0 = int(_round(a * (1 << SHIFT) / abs(b)))
            x0 = (x0 << SHIFT) + (1 << (SHIFT - 1))

        ends = [[j, i], [j, i]]
        for k in range(2):
            gap = 0
            x, y, dx, dy = x0, y0, dx0, dy0
            if k:
                dx, dy = -dx, -dy
            while True:
                if xflag:
                    j1, i1 = x, y >> SHIFT
                else:
                    j1, i1 = x >> SHIFT, y
                if j1 < 0 or j1 >= w or i1 < 0 or i1 >= h:
                    break
                if m[i1, j1]:
                    gap = 0
                    ends[k] = [j1, i1]
                else:
                    gap += 1
                    if gap > line_gap:
                        break
                x += dx
                y += dy

        good = (abs(ends[1][0] - ends[0][0]) >= line_length
                or abs(ends[1][1] - ends[0][1]) >= line_length)

        for k in range(2):
            x, y, dx, dy = x0, y0, dx0, dy0
            if k:
                dx, dy = -dx, -dy
            while True:
                if xflag:
                    j1, i1 = x, y >> SHIFT
                else:
                    j1, i1 = x >> SHIFT, y
                if j1 < 0 or j1 >= w or i1 < 0 or i1 >= h:
                    break
                if m[i1, j1]:
                    if good and voted[i1, j1]:
                        acc[ang_idx, bins(j1, i1)] -= 1
                        voted[i1, j1] = 0
                    m[i1, j1] = 0
                if j1 == ends[k][0] and i1 == ends[k][1]:
                    break
                x += dx
                y += dy

        if good:
            lines.append((ends[0][0], ends[0][1], ends[1][0], ends[1][1]))

    return np.array(lines, dtype=np.int64).reshape(-1, 4)
