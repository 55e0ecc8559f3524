"""Shared test utilities: fixture builders and small independent oracles."""

import numpy as np

from algaeid.segmentation import Organism


def organism_from_pixels(pixels, patches=(), org_id=1):
    """Build an Organism directly from (row, col) pixel coordinates."""
    px = np.array(sorted(set(map(tuple, pixels))), dtype=np.int64)
    return Organism(
        id=org_id,
        pixels=px,
        x_min=int(px[:, 1].min()), y_min=int(px[:, 0].min()),
        x_max=int(px[:, 1].max()), y_max=int(px[:, 0].max()),
        patches=tuple(patches),
    )


def disk_pixels(radius, cy=0, cx=0):
    """Pixels of the inclusive rasterized disk dx^2+dy^2 <= r^2."""
    r = int(radius)
    out = []
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            if dx * dx + dy * dy <= r * r:
                out.append((cy + dy, cx + dx))
    return out


def ellipse_pixels(semi_x, semi_y, cy=0, cx=0):
    """Pixels with (dx/semi_x)^2 + (dy/semi_y)^2 <= 1."""
    out = []
    for dy in range(-int(semi_y) - 1, int(semi_y) + 2):
        for dx in range(-int(semi_x) - 1, int(semi_x) + 2):
            if (dx / semi_x) ** 2 + (dy / semi_y) ** 2 <= 1.0:
                out.append((cy + dy, cx + dx))
    return out


# --- naive morphology oracle (dense offset loops) ---

def disk_offsets(radius):
    r = int(radius)
    return [(dy, dx) for dy in range(-r, r + 1) for dx in range(-r, r + 1)
            if dx * dx + dy * dy <= r * r]


def naive_erode(img, radius):
    r = int(radius)
    padded = np.pad(img, r, mode="edge")
    h, w = img.shape
    out = np.full(img.shape, np.inf)
    for dy, dx in disk_offsets(radius):
        out = np.minimum(out, padded[r + dy:r + dy + h, r + dx:r + dx + w])
    return out


def naive_dilate(img, radius):
    r = int(radius)
    padded = np.pad(img, r, mode="edge")
    h, w = img.shape
    out = np.full(img.shape, -np.inf)
    for dy, dx in disk_offsets(radius):
        out = np.maximum(out, padded[r + dy:r + dy + h, r + dx:r + dx + w])
    return out


def naive_opening(img, radius):
    return naive_dilate(naive_erode(img, radius), radius)


def naive_gaussian(img, sigma):
    """Dense 2-D convolution with the truncated Gaussian kernel,
    edge-replicated borders."""
    import math
    r = math.ceil(3.0 * sigma)
    x = np.arange(-r, r + 1, dtype=np.float64)
    k1 = np.exp(-0.5 * (x / sigma) ** 2)
    k1 /= k1.sum()
    k2 = np.outer(k1, k1)
    padded = np.pad(img, r, mode="edge")
    h, w = img.shape
    out = np.zeros(img.shape)
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            out += k2[dy + r, dx + r] * padded[r + dy:r + dy + h, r + dx:r + dx + w]
    return out


def flood_fill_components(mask):
    """Stack-based flood-fill labeling oracle, 8-connectivity, ids in
    raster-scan order of seed pixels. Returns (labels, count)."""
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int32)
    count = 0
    for sy in range(h):
        for sx in range(w):
            if not mask[sy, sx] or labels[sy, sx]:
                continue
            count += 1
            stack = [(sy, sx)]
            labels[sy, sx] = count
            while stack:
                y, x = stack.pop()
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        ny, nx = y + dy, x + dx
                        if 0 <= ny < h and 0 <= nx < w \
                                and mask[ny, nx] and not labels[ny, nx]:
                            labels[ny, nx] = count
                            stack.append((ny, nx))
    return labels, count


def random_histogram(rng):
    """Mixed unimodal/bimodal integer histograms with empty bins."""
    bins = int(rng.integers(16, 256))
    idx = np.arange(bins)
    kind = rng.integers(0, 3)
    if kind == 0:  # unimodal
        mu = rng.uniform(0, bins)
        sd = rng.uniform(bins / 20, bins / 3)
        shape = np.exp(-0.5 * ((idx - mu) / sd) ** 2)
    elif kind == 1:  # bimodal
        mu1, mu2 = rng.uniform(0, bins, size=2)
        sd1, sd2 = rng.uniform(bins / 30, bins / 6, size=2)
        shape = (np.exp(-0.5 * ((idx - mu1) / sd1) ** 2)
                 + rng.uniform(0.2, 2.0) * np.exp(-0.5 * ((idx - mu2) / sd2) ** 2))
    else:  # rough noise
        shape = rng.random(bins)
    counts = np.floor(shape * rng.uniform(5, 500)).astype(np.int64)
    counts[rng.random(bins) < 0.3] = 0
    if counts.sum() == 0:
        counts[int(rng.integers(0, bins))] = 1
    return counts


def oracle_otsu_index(counts):
    """Exhaustive within-class variance minimization, computed from the
    literal definition: for every split, weighted squared deviation of each
    class from its own mean. Class membership is expressed by masking the
    full-length histogram (not slicing) so that moving an empty bin across
    the split leaves every sum bitwise unchanged, exactly as a zero count
    should."""
    c = np.asarray(counts, dtype=np.float64)
    n = len(c)
    idx = np.arange(n, dtype=np.float64)
    splits = np.arange(n - 1)
    lo = c[None, :] * (idx[None, :] <= splits[:, None])
    hi = c[None, :] * (idx[None, :] > splits[:, None])
    total = np.zeros(n - 1)
    for cls in (lo, hi):
        weight = cls.sum(axis=1)
        safe = np.where(weight > 0, weight, 1.0)
        mean = (cls * idx[None, :]).sum(axis=1) / safe
        dev = (cls * (idx[None, :] - mean[:, None]) ** 2).sum(axis=1)
        total += np.where(weight > 0, dev, 0.0)
    return int(np.argmin(total))


# --- convex hull oracle (gift wrapping plus half-plane membership) ---

def gift_wrap_hull(points):
    """Jarvis-march convex hull over integer (x, y) tuples; collinear
    inputs collapse to their extreme pair."""
    pts = sorted(set(map(tuple, points)))
    if len(pts) <= 2:
        return pts
    hull = []
    start = min(pts)
    point = start
    while True:
        hull.append(point)
        candidate = pts[0] if pts[0] != point else pts[1]
        for q in pts:
            if q == point:
                continue
            cross = ((candidate[0] - point[0]) * (q[1] - point[1])
                     - (candidate[1] - point[1]) * (q[0] - point[0]))
            if cross < 0:
                candidate = q
            elif cross == 0:
                # keep the farthest collinear candidate
                d_c = (candidate[0] - point[0]) ** 2 + (candidate[1] - point[1]) ** 2
                d_q = (q[0] - point[0]) ** 2 + (q[1] - point[1]) ** 2
                if d_q > d_c:
                    candidate = q
        point = candidate
        if point == start:
            break
        if len(hull) > len(pts):
            raise AssertionError("gift wrapping failed to close")
    if len(hull) < 3:
        return [pts[0], pts[-1]]
    signed2 = sum(a[0] * b[1] - b[0] * a[1]
                  for a, b in zip(hull, hull[1:] + hull[:1]))
    return hull if signed2 > 0 else hull[::-1]


def oracle_convex_area(pixels):
    """Count bounding-box pixels inside all half-planes of the hull."""
    import math
    points = [(int(x), int(y)) for (y, x) in pixels]
    hull = gift_wrap_hull(points)
    if len(hull) == 1:
        return 1
    if len(hull) == 2:
        (x0, y0), (x1, y1) = hull
        return math.gcd(abs(x1 - x0), abs(y1 - y0)) + 1
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]
    count = 0
    for gy in range(min(ys), max(ys) + 1):
        for gx in range(min(xs), max(xs) + 1):
            inside = True
            for (x0, y0), (x1, y1) in zip(hull, hull[1:] + hull[:1]):
                if (x1 - x0) * (gy - y0) - (y1 - y0) * (gx - x0) < 0:
                    inside = False
                    break
            if inside:
                count += 1
    return count


def random_organism(rng, max_size=14):
    """A random 8-connected component harvested from a random mask."""
    from algaeid.segmentation import BinaryMask, connected_components
    while True:
        h = int(rng.integers(4, max_size))
        w = int(rng.integers(4, max_size))
        mask = rng.random((h, w)) < 0.55
        lab = connected_components(BinaryMask(foreground=mask))
        if lab.count == 0:
            continue
        comp = int(rng.integers(1, lab.count + 1))
        pixels = np.argwhere(lab.labels == comp)
        return organism_from_pixels(pixels)
