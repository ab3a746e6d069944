"""numba backend. Same contracts as :mod:`._numpy`."""
import numpy as np
from numba import njit

SHIFT = 16
_MAX_CELLS = 512


@njit(cache=True, nogil=True)
def _pair_sums(ax, ay, bx, by, radii, width, height, translation, same):
    nr = radii.shape[0]
    na = ax.shape[0]
    nb = bx.shape[0]
    out = np.zeros(nr)
    if nr == 0 or na == 0 or nb == 0:
        return out
    rmax = radii[nr - 1]
    if rmax <= 0.0:
        return out

    # uniform cell grid over the b points; cells at least rmax wide so every
    # pair closer than rmax sits in neighbouring cells
    cw = max(rmax, width / _MAX_CELLS)
    ch = max(rmax, height / _MAX_CELLS)
    nx = int(width / cw) + 1
    ny = int(height / ch) + 1
    cell_of = np.empty(nb, dtype=np.int64)
    counts = np.zeros(nx * ny + 1, dtype=np.int64)
    for q in range(nb):
        cx = min(max(int(bx[q] / cw), 0), nx - 1)
        cy = min(max(int(by[q] / ch), 0), ny - 1)
        c = cy * nx + cx
        cell_of[q] = c
        counts[c + 1] += 1
    for c in range(nx * ny):
        counts[c + 1] += counts[c]
    fill = counts[:-1].copy()
    members = np.empty(nb, dtype=np.int64)
    for q in range(nb):
        c = cell_of[q]
        members[fill[c]] = q
        fill[c] += 1

    hist = np.zeros(nr + 1)
    area = width * height
    for p in range(na):
        cx = min(max(int(ax[p] / cw), 0), nx - 1)
        cy = min(max(int(ay[p] / ch), 0), ny - 1)
        for gy in range(max(cy - 1, 0), min(cy + 2, ny)):
            for gx in range(max(cx - 1, 0), min(cx + 2, nx)):
                c = gy * nx + gx
                for s in range(counts[c], counts[c + 1]):
                    q = members[s]
                    if same and q == p:
                        continue
                    dx = abs(ax[p] - bx[q])
                    dy = abs(ay[p] - by[q])
                    d = np.sqrt(dx * dx + dy * dy)
                    k = np.searchsorted(radii, d, side="right")
                    if k >= nr:
                        continue
                    if translation:
                        hist[k] += area / ((width - dx) * (height - dy))
                    else:
                        hist[k] += 1.0
    acc = 0.0
    for k in range(nr):
        acc += hist[k]
        out[k] = acc
    return out


def pair_sums(ax, ay, bx, by, radii, width, height, translation, same):
    return _pair_sums(np.ascontiguousarray(ax, dtype=np.float64), np.ascontiguousarray(ay, dtype=np.float64),
                      np.ascontiguousarray(bx, dtype=np.float64), np.ascontiguousarray(by, dtype=np.float64),
                      np.ascontiguousarray(radii, dtype=np.float64), float(width), float(height),
                      bool(translation), bool(same))


@njit(cache=True, nogil=True)
def _round(v):
    return np.floor(v + 0.5)


@njit(cache=True, nogil=True)
def _hough_ppht(mask, order, cos_t, sin_t, numrho, threshold, line_length, line_gap):
    h, w = mask.shape
    m = mask.copy()
    voted = np.zeros((h, w), dtype=np.uint8)
    nang = cos_t.shape[0]
    acc = np.zeros((nang, numrho), dtype=np.int64)
    offset = (numrho - 1) // 2
    lines = np.empty((order.shape[0], 4), dtype=np.int64)
    nlines = 0
    ends = np.empty((2, 2), dtype=np.int64)

    for t in range(order.shape[0]):
        flat = order[t]
        i = flat // w
        j = flat - i * w
        if m[i, j] == 0:
            continue
        max_val = -1
        max_n = 0
        for n in range(nang):
            r = np.int64(_round(j * cos_t[n] + i * sin_t[n])) + offset
            acc[n, r] += 1
            if acc[n, r] > max_val:
                max_val = acc[n, r]
                max_n = n
        voted[i, j] = 1
        if max_val < threshold:
            continue

        a = -sin_t[max_n]
        b = cos_t[max_n]
        x0 = j
        y0 = i
        if abs(a) > abs(b):
            xflag = True
            dx0 = 1 if a > 0 else -1
            dy0 = np.int64(_round(b * (1 << SHIFT) / abs(a)))
            y0 = (y0 << SHIFT) + (1 << (SHIFT - 1))
        else:
            xflag = False
            dy0 = 1 if b > 0 else -1
            dx0 = np.int64(_round(a * (1 << SHIFT) / abs(b)))
            x0 = (x0 << SHIFT) + (1 << (SHIFT - 1))

        for k in range(2):
            ends[k, 0] = j
            ends[k, 1] = i
            gap = 0
            x = x0
            y = y0
            dx = dx0 if k == 0 else -dx0
            dy = dy0 if k == 0 else -dy0
            while True:
                if xflag:
                    j1 = x
                    i1 = y >> SHIFT
                else:
                    j1 = x >> SHIFT
                    i1 = y
                if j1 < 0 or j1 >= w or i1 < 0 or i1 >= h:
                    break
                if m[i1, j1]:
                    gap = 0
                    ends[k, 0] = j1
                    ends[k, 1] = i1
                else:
                    gap += 1
                    if gap > line_gap:
                        break
                x += dx
                y += dy

        good = (abs(ends[1, 0] - ends[0, 0]) >= line_length
                or abs(ends[1, 1] - ends[0, 1]) >= line_length)

        for k in range(2):
            x = x0
            y = y0
            dx = dx0 if k == 0 else -dx0
            dy = dy0 if k == 0 else -dy0
            while True:
                if xflag:
                    j1 = x
                    i1 = y >> SHIFT
                else:
                    j1 = x >> SHIFT
                    i1 = y
                if j1 < 0 or j1 >= w or i1 < 0 or i1 >= h:
                    break
                if m[i1, j1]:
                    if good and voted[i1, j1]:
                        for n in range(nang):
                            r = np.int64(_round(j1 * cos_t[n] + i1 * sin_t[n])) + offset
                            acc[n, r] -= 1
                        voted[i1, j1] = 0
                    m[i1, j1] = 0
                if j1 == ends[k, 0] and i1 == ends[k, 1]:
                    break
                x += dx
                y += dy

        if good:
            lines[nlines, 0] = ends[0, 0]
            lines[nlines, 1] = ends[0, 1]
            lines[nlines, 2] = ends[1, 0]
            lines[nlines, 3] = ends[1, 1]
            nlines += 1
    return lines[:nlines].copy()


def hough_ppht(mask, order, cos_t, sin_t, numrho, threshold, line_length, line_gap):
    return _hough_ppht(np.ascontiguousarray(mask, dtype=np.uint8), np.ascontiguousarray(order, dtype=np.int64),
                       np.ascontiguousarray(cos_t, dtype=np.float64), np.ascontiguousarray(sin_t, dtype=np.float64),
                       int(numrho), int(threshold), int(line_length), int(line_gap))
