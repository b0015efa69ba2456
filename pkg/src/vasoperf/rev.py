"""Representative elementary volumes: probe-cube growth curves, REV size
selection, regular-grid partition of the vascular domain with per-REV
geometric statistics, and radial profiles.

Cylinder volume and lateral surface are apportioned to boxes by clipped
centerline length, so sums over a tiling partition reproduce whole-domain
totals exactly.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from vasoperf.errors import ConfigError, NumericError
from vasoperf.network import SMALL, VesselNetwork


def clip_lengths(p0: np.ndarray, p1: np.ndarray, lo, hi,
                 upper_open=None, domain_hi=None) -> np.ndarray:
    """Clipped length fraction of each segment inside an axis-aligned box.

    upper_open marks axes whose upper face is exclusive for segments lying
    exactly in that face (needed so a tiling of boxes counts on-boundary
    segments exactly once); the face stays inclusive where the box touches
    domain_hi.
    """
    p0 = np.atleast_2d(p0)
    p1 = np.atleast_2d(p1)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    d = p1 - p0
    t0 = np.zeros(len(p0))
    t1 = np.ones(len(p0))
    for a in range(3):
        da = d[:, a]
        degenerate = np.abs(da) < 1e-300
        with np.errstate(divide="ignore", invalid="ignore"):
            ta = (lo[a] - p0[:, a]) / da
            tb = (hi[a] - p0[:, a]) / da
        swap = ta > tb
        ta2 = np.where(swap, tb, ta)
        tb2 = np.where(swap, ta, tb)
        t0 = np.where(degenerate, t0, np.maximum(t0, ta2))
        t1 = np.where(degenerate, t1, np.minimum(t1, tb2))
        if upper_open is not None and upper_open[a] and (
                domain_hi is None or hi[a] < domain_hi[a]):
            inside = (p0[:, a] >= lo[a]) & (p0[:, a] < hi[a])
        else:
            inside = (p0[:, a] >= lo[a]) & (p0[:, a] <= hi[a])
        t1 = np.where(degenerate & ~inside, -1.0, t1)
    return np.maximum(np.clip(t1, 0, 1) - np.clip(t0, 0, 1), 0.0)


def _box_intersection(lo_a, hi_a, lo_b, hi_b):
    lo = np.maximum(lo_a, lo_b)
    hi = np.minimum(hi_a, hi_b)
    if np.any(hi <= lo):
        return None
    return lo, hi


@dataclass
class RevGrowthCurve:
    """Evolution of small-vessel statistics in one growing probe cube."""

    center: np.ndarray
    lengths: np.ndarray   # cube-root of clipped volume, um, strictly increasing
    vf_small: np.ndarray  # small-vessel volume fraction per size
    sv_small: np.ndarray  # small-vessel surface-to-volume ratio, 1/um


def grow_probe_cubes(network: VesselNetwork, box, n_centers: int, seed: int,
                     initial_edge: Optional[float] = None,
                     step: Optional[float] = None,
                     max_steps: Optional[int] = None) -> List[RevGrowthCurve]:
    """Grow cubes from random interior centers and track small-vessel stats.

    Centers are sampled in the inner 70% band of the domain; the initial
    cube edge and the growth step default to 1/300 of the largest domain
    extent. Protruding cubes are clipped to the domain. Growth stops once the
    cube covers the whole domain.
    """
    if network.partition is None:
        raise ConfigError("probe growth requires a partitioned network")
    lo, hi = (np.asarray(v, dtype=float) for v in box)
    ext = hi - lo
    rng = np.random.default_rng(seed)
    centers = lo + 0.15 * ext + rng.random((n_centers, 3)) * 0.7 * ext

    small = network.segment_ids(SMALL)
    p0 = network.positions[network.seg_nodes[small, 0]]
    p1 = network.positions[network.seg_nodes[small, 1]]
    seg_len = network.lengths[small]
    vol_per_len = np.pi * network.radii[small] ** 2
    surf_per_len = 2.0 * np.pi * network.radii[small]

    edge0 = initial_edge if initial_edge is not None else ext.max() / 300.0
    dstep = step if step is not None else edge0
    vol_domain = float(np.prod(ext))

    curves = []
    for c in centers:
        ls, vfs, svs = [], [], []
        edge = edge0
        steps = 0
        while True:
            cube = _box_intersection(np.maximum(c - edge / 2, lo),
                                     np.minimum(c + edge / 2, hi), lo, hi)
            if cube is not None:
                clo, chi = cube
                vol = float(np.prod(chi - clo))
                if vol > 0:
                    if small.size:
                        frac = clip_lengths(p0, p1, clo, chi)
                        lc = frac * seg_len
                        vfs.append(float(np.sum(vol_per_len * lc)) / vol)
                        svs.append(float(np.sum(surf_per_len * lc)) / vol)
                    else:
                        vfs.append(0.0)
                        svs.append(0.0)
                    ls.append(vol ** (1.0 / 3.0))
                    if vol >= vol_domain * (1 - 1e-12):
                        break
            edge += dstep
            steps += 1
            if max_steps is not None and steps >= max_steps:
                break
            if steps > 10000:
                break
        ls = np.array(ls)
        keep = np.concatenate([[True], np.diff(ls) > 0]) if ls.size else np.array([], bool)
        curves.append(RevGrowthCurve(center=c, lengths=ls[keep],
                                     vf_small=np.array(vfs)[keep],
                                     sv_small=np.array(svs)[keep]))
    return curves


def select_rev_length(curves: Sequence[RevGrowthCurve], window: float,
                      tol: float = 0.1, quorum: float = 0.8) -> float:
    """Smallest probe size where the volume-fraction curves have stabilized.

    A curve is stable at l when the relative range of its volume fraction
    over [l, l + window] falls below tol; the result is the smallest l at
    which at least `quorum` of the curves are stable.
    """
    if len(curves) < 3:
        raise ConfigError("REV selection needs at least 3 growth curves")

    def stable_at(curve, l):
        m = (curve.lengths >= l) & (curve.lengths <= l + window)
        if m.sum() < 2:
            return False
        vals = curve.vf_small[m]
        mean = vals.mean()
        if mean == 0:
            return bool(vals.max() == vals.min())
        return (vals.max() - vals.min()) / mean < tol

    candidates = np.unique(np.concatenate([c.lengths for c in curves]))
    for l in candidates:
        n_ok = sum(stable_at(c, l) for c in curves)
        if n_ok >= quorum * len(curves):
            return float(l)
    raise NumericError("no probe size stabilizes the volume-fraction curves; "
                       "the domain is likely too small for an REV")


@dataclass
class RevPartition:
    """Regular-grid REV tiling of the vascular domain with per-REV stats."""

    domain_lo: np.ndarray
    domain_hi: np.ndarray
    shape: tuple                 # boxes per axis
    centers: np.ndarray          # (n, 3)
    extents: np.ndarray          # (n, 3)
    volumes: np.ndarray          # (n,) um^3
    vf_small: np.ndarray
    vf_large: np.ndarray
    vf_total: np.ndarray
    sv_small: np.ndarray         # 1/um
    r_tilde: np.ndarray          # non-dimensional radial distance
    length_small: np.ndarray     # clipped small-vessel length per REV, um
    length_large: np.ndarray

    @property
    def n_rev(self) -> int:
        return len(self.centers)

    def box(self, j: int):
        return (self.centers[j] - self.extents[j] / 2,
                self.centers[j] + self.extents[j] / 2)

    def rev_of_points(self, points: np.ndarray) -> np.ndarray:
        """REV index per point (half-open boxes; -1 outside the domain)."""
        pts = np.atleast_2d(points)
        n = np.array(self.shape)
        ext = (self.domain_hi - self.domain_lo) / n
        idx = np.floor((pts - self.domain_lo) / ext).astype(int)
        inside = np.all((pts >= self.domain_lo) & (pts <= self.domain_hi), axis=1)
        idx = np.clip(idx, 0, n - 1)
        flat = idx[:, 0] * n[1] * n[2] + idx[:, 1] * n[2] + idx[:, 2]
        return np.where(inside, flat, -1)


def _radial_distance(center, dom_lo, dom_hi):
    c0 = (dom_lo + dom_hi) / 2.0
    d = center - c0
    r = np.linalg.norm(d)
    if r == 0:
        return 0.0
    u = d / r
    t = np.inf
    for a in range(3):
        if u[a] > 1e-300:
            t = min(t, (dom_hi[a] - c0[a]) / u[a])
        elif u[a] < -1e-300:
            t = min(t, (dom_lo[a] - c0[a]) / u[a])
    return float(r / t)


def partition_into_revs(box, l_rev: float,
                        network: Optional[VesselNetwork] = None) -> RevPartition:
    """Tile the domain into near-cubic boxes of edge ~ l_rev and compute
    per-REV vessel statistics (requires a partitioned network)."""
    lo, hi = (np.asarray(v, dtype=float) for v in box)
    ext = hi - lo
    if not l_rev > 0:
        raise ConfigError("l_rev must be positive")
    if l_rev > ext.min() * (1 + 1e-9):
        raise ConfigError(f"l_rev {l_rev} exceeds the smallest domain extent "
                          f"{ext.min()}")
    n = np.maximum(1, np.round(ext / l_rev).astype(int))
    edges = [np.linspace(lo[a], hi[a], n[a] + 1) for a in range(3)]

    centers, extents = [], []
    boxes = []
    for i in range(n[0]):
        for j in range(n[1]):
            for k in range(n[2]):
                blo = np.array([edges[0][i], edges[1][j], edges[2][k]])
                bhi = np.array([edges[0][i + 1], edges[1][j + 1], edges[2][k + 1]])
                boxes.append((blo, bhi))
                centers.append((blo + bhi) / 2)
                extents.append(bhi - blo)
    centers = np.array(centers)
    extents = np.array(extents)
    volumes = np.prod(extents, axis=1)
    nrev = len(boxes)

    vf_s = np.zeros(nrev)
    vf_l = np.zeros(nrev)
    sv_s = np.zeros(nrev)
    len_s = np.zeros(nrev)
    len_l = np.zeros(nrev)
    if network is not None:
        if network.partition is None:
            raise ConfigError("per-REV statistics require a partitioned network")
        p0 = network.positions[network.seg_nodes[:, 0]]
        p1 = network.positions[network.seg_nodes[:, 1]]
        seg_len = network.lengths
        vol_pl = np.pi * network.radii ** 2
        surf_pl = 2.0 * np.pi * network.radii
        small_mask = network.partition == SMALL
        upper_open = np.array([True, True, True])
        for r, (blo, bhi) in enumerate(boxes):
            frac = clip_lengths(p0, p1, blo, bhi, upper_open=upper_open,
                                   domain_hi=hi)
            lc = frac * seg_len
            ls = float(np.sum(lc[small_mask]))
            ll = float(np.sum(lc[~small_mask]))
            len_s[r] = ls
            len_l[r] = ll
            vf_s[r] = float(np.sum((vol_pl * lc)[small_mask])) / volumes[r]
            vf_l[r] = float(np.sum((vol_pl * lc)[~small_mask])) / volumes[r]
            sv_s[r] = float(np.sum((surf_pl * lc)[small_mask])) / volumes[r]

    r_tilde = np.array([_radial_distance(c, lo, hi) for c in centers])
    return RevPartition(domain_lo=lo, domain_hi=hi, shape=tuple(int(v) for v in n),
                        centers=centers, extents=extents, volumes=volumes,
                        vf_small=vf_s, vf_large=vf_l, vf_total=vf_s + vf_l,
                        sv_small=sv_s, r_tilde=r_tilde,
                        length_small=len_s, length_large=len_l)


@dataclass
class LinearFit:
    slope: float
    intercept: float
    r_squared: float


def fit_line(x: np.ndarray, y: np.ndarray) -> LinearFit:
    """Ordinary least squares y = a x + b with the fit's R^2."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2:
        raise NumericError("linear fit needs at least 2 points")
    vx = np.var(x)
    if vx == 0:
        raise NumericError("linear fit undefined: no spread in x")
    a = float(np.cov(x, y, bias=True)[0, 1] / vx)
    b = float(y.mean() - a * x.mean())
    sse = float(np.sum((y - (a * x + b)) ** 2))
    sst = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - sse / sst if sst > 0 else 1.0
    return LinearFit(slope=a, intercept=b, r_squared=r2)


@dataclass
class RadialProfile:
    r_tilde: np.ndarray
    vf_small: np.ndarray
    vf_large: np.ndarray
    vf_total: np.ndarray
    fit_small: LinearFit
    fit_large: LinearFit
    fit_total: LinearFit


def radial_profile(partition: RevPartition) -> RadialProfile:
    """Volume fractions over non-dimensional radius with least-squares fits."""
    if partition.n_rev < 2:
        raise NumericError("radial profile needs at least 2 REVs")
    return RadialProfile(
        r_tilde=partition.r_tilde,
        vf_small=partition.vf_small,
        vf_large=partition.vf_large,
        vf_total=partition.vf_total,
        fit_small=fit_line(partition.r_tilde, partition.vf_small),
        fit_large=fit_line(partition.r_tilde, partition.vf_large),
        fit_total=fit_line(partition.r_tilde, partition.vf_total),
    )


def save_rev_stats(partition: RevPartition, path: str) -> None:
    """rev_stats.csv per the reporting interface."""
    with open(path, "w", encoding="utf-8") as f:
        f.write("rev_id,cx,cy,cz,volume,vf_small,vf_large,vf_total,sv_small,r_tilde\n")
        for j in range(partition.n_rev):
            c = partition.centers[j]
            f.write(f"{j},{c[0]!r},{c[1]!r},{c[2]!r},{partition.volumes[j]!r},"
                    f"{partition.vf_small[j]!r},{partition.vf_large[j]!r},"
                    f"{partition.vf_total[j]!r},{partition.sv_small[j]!r},"
                    f"{partition.r_tilde[j]!r}\n")
