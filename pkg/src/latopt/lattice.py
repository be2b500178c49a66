"""Parameterized 2-D lattice unit cells: catalog, rasterization and sampling.

Ten rod-based cell types (labels A..J) are defined on the unit square and
treated as periodic (a rod reaching an edge continues on the opposite edge).
Each cell is controlled by a single width parameter ``a`` (rod width in cell
lengths); rasterization produces a binary RES x RES bitmap whose volume
fraction varies nearly continuously with ``a``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

RES = 200                 # pixels per cell side
PIX = 1.0 / RES           # pixel size in cell lengths
A_MIN = 3.0 / RES         # minimum printable strut width (3 px)

CLASS_LABELS = ("A", "B", "C", "D", "E", "F", "G", "H", "I", "J")


class LatticeError(ValueError):
    """Invalid lattice geometry request (width or volume fraction out of range)."""


@dataclass(frozen=True)
class RodSegment:
    """Straight rod on the unit cell, width = w_mult * class width a."""

    p0: tuple[float, float]
    p1: tuple[float, float]
    w_mult: float = 1.0

    def __post_init__(self):
        for p in (self.p0, self.p1):
            if not (0.0 <= p[0] <= 1.0 and 0.0 <= p[1] <= 1.0):
                raise LatticeError(f"rod endpoint {p} outside the unit square")
        if self.w_mult <= 0.0:
            raise LatticeError("rod width multiplier must be positive")


@dataclass
class LatticeClass:
    """One cell type: label, rod list and feasible width range."""

    label: str
    rods: tuple[RodSegment, ...]
    a_min: float = A_MIN
    _fields: np.ndarray | None = field(default=None, repr=False, compare=False)
    _a_max: float | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not self.rods:
            raise LatticeError(f"class {self.label} has no rods")
        if self.a_min < A_MIN:
            raise LatticeError("a_min below the 3-pixel printable limit")

    @property
    def distance_fields(self) -> np.ndarray:
        """(n_rods, RES, RES) distances from pixel centers to each rod (periodic)."""
        if self._fields is None:
            self._fields = np.stack(
                [_segment_distance_field(r.p0, r.p1) for r in self.rods]
            )
        return self._fields

    @property
    def a_max(self) -> float:
        """Smallest width at which the rasterized cell saturates to all-solid."""
        if self._a_max is None:
            wm = np.array([r.w_mult for r in self.rods])
            scaled = self.distance_fields / wm[:, None, None]
            self._a_max = float(2.0 * (scaled.min(axis=0).max() + 0.5 * PIX))
        return self._a_max

    @property
    def vf_range(self) -> tuple[float, float]:
        lo = volume_fraction(rasterize(self, self.a_min))
        hi = volume_fraction(rasterize(self, self.a_max))
        return lo, hi


@dataclass(frozen=True)
class Microstructure:
    """Realized cell: class label, width, measured volume fraction, bitmap."""

    label: str
    a: float
    vf: float
    bitmap: np.ndarray  # (RES, RES) bool, [row=y from bottom, col=x]


def _cross(extra=()):
    base = (RodSegment((0.0, 0.5), (1.0, 0.5)), RodSegment((0.5, 0.0), (0.5, 1.0)))
    return base + tuple(extra)


def _diagonals():
    return (RodSegment((0.0, 0.0), (1.0, 1.0)), RodSegment((0.0, 1.0), (1.0, 0.0)))


def _edge_bars():
    # Under the periodic wrap, bars on the cell edges tile into a grid; this is
    # the center cross shifted by half a cell.
    return (RodSegment((0.0, 0.0), (1.0, 0.0)), RodSegment((0.0, 0.0), (0.0, 1.0)))


def build_catalog() -> dict[str, LatticeClass]:
    """The ten cell types.

    A center cross; B crossed diagonals; C edge bars (A shifted by half a
    cell); D/E cross with two extra horizontal/vertical bars; F cross plus
    diagonals; G/H cross plus a single main/anti diagonal (the two
    non-orthotropic types, mirror images of each other); I diagonals plus
    edge bars; J diagonals plus one horizontal center bar.
    """
    cat = {
        "A": _cross(),
        "B": _diagonals(),
        "C": _edge_bars(),
        "D": _cross((RodSegment((0.0, 0.25), (1.0, 0.25)),
                     RodSegment((0.0, 0.75), (1.0, 0.75)))),
        "E": _cross((RodSegment((0.25, 0.0), (0.25, 1.0)),
                     RodSegment((0.75, 0.0), (0.75, 1.0)))),
        "F": _cross(_diagonals()),
        "G": _cross((RodSegment((0.0, 0.0), (1.0, 1.0)),)),
        "H": _cross((RodSegment((0.0, 1.0), (1.0, 0.0)),)),
        "I": _diagonals() + _edge_bars(),
        "J": _diagonals() + (RodSegment((0.0, 0.5), (1.0, 0.5)),),
    }
    return {t: LatticeClass(t, rods) for t, rods in cat.items()}


CATALOG = build_catalog()


def get_class(label_or_class) -> LatticeClass:
    if isinstance(label_or_class, LatticeClass):
        return label_or_class
    try:
        return CATALOG[label_or_class]
    except KeyError:
        raise LatticeError(f"unknown lattice class {label_or_class!r}") from None


def _segment_distance_field(p0, p1, res: int = RES) -> np.ndarray:
    """Distance from every pixel center to a segment, minimized over the
    3x3 periodic images of the cell."""
    c = (np.arange(res) + 0.5) / res
    X, Y = np.meshgrid(c, c)
    p0 = np.asarray(p0, float)
    v = np.asarray(p1, float) - p0
    vv = max(float(v @ v), 1e-30)
    d = np.full((res, res), np.inf)
    for sx in (-1.0, 0.0, 1.0):
        for sy in (-1.0, 0.0, 1.0):
            px = X + sx - p0[0]
            py = Y + sy - p0[1]
            t = np.clip((px * v[0] + py * v[1]) / vv, 0.0, 1.0)
            d = np.minimum(d, np.hypot(px - t * v[0], py - t * v[1]))
    return d


def _bit_reverse6(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=np.int64) % 64
    r = np.zeros_like(m)
    for b in range(6):
        r = (r << 1) | ((m >> b) & 1)
    return r


def _dither_thresholds(res: int = RES) -> np.ndarray:
    # Ordered-dither thresholds for the band boundary. Built from a symmetric
    # index so bitmaps keep the mirror symmetries of their rod layout, and a
    # bit-reversed ordering so partially covered rows/columns fill evenly;
    # this gives near-continuous volume fraction control even for
    # axis-aligned rods (a pure center-in-band rule would jump by whole rows).
    k = np.arange(res)
    s = np.minimum(k, res - 1 - k)
    b = _bit_reverse6(s) / 64.0
    tau = (b[None, :] + b[:, None]) % 1.0
    return tau + 1.0 / 128.0


_TAU = {RES: _dither_thresholds(RES)}


def _coverage(cls: LatticeClass, a: float) -> np.ndarray:
    """Approximate pixel coverage of the rod union: linear ramp of the signed
    band distance over one pixel width, max over rods."""
    wm = np.array([r.w_mult for r in cls.rods])
    c = 0.5 + (0.5 * a * wm[:, None, None] - cls.distance_fields) / PIX
    return np.clip(c.max(axis=0), 0.0, 1.0)


def rasterize(label_or_class, a: float) -> np.ndarray:
    """Binary (RES, RES) bitmap of a cell at rod width ``a``.

    Pixels well inside / outside the rod bands are solid / void; pixels the
    band boundary crosses are resolved by a symmetric ordered dither on the
    coverage fraction. Raises LatticeError if ``a`` is outside
    [a_min, a_max].
    """
    cls = get_class(label_or_class)
    if not (cls.a_min <= a <= cls.a_max * (1.0 + 1e-12)):
        raise LatticeError(
            f"width {a:.6g} outside [{cls.a_min:.6g}, {cls.a_max:.6g}] for class {cls.label}"
        )
    return _coverage(cls, a) > _TAU[RES]


def volume_fraction(bitmap: np.ndarray) -> float:
    return float(np.asarray(bitmap, dtype=float).mean())


def solve_width_for_vf(label_or_class, rho_target: float, tol: float = 1e-3) -> float:
    """Invert volume fraction to rod width by bisection on the rasterized cell.

    Returns a width whose rasterized volume fraction is within ``tol`` of the
    target; raises LatticeError when the target is outside the class's
    achievable range or the tolerance cannot be met.
    """
    cls = get_class(label_or_class)
    lo, hi = cls.a_min, cls.a_max
    v_lo, v_hi = cls.vf_range
    if not (v_lo - tol <= rho_target <= v_hi + tol):
        raise LatticeError(
            f"volume fraction {rho_target:.4f} unachievable for class {cls.label} "
            f"(range [{v_lo:.4f}, {v_hi:.4f}])"
        )
    if rho_target <= v_lo:
        return lo
    if rho_target >= v_hi:
        return hi
    best_err, best_a = abs(v_lo - rho_target), lo
    for _ in range(64):
        mid = 0.5 * (lo + hi)
        v = volume_fraction(rasterize(cls, mid))
        if abs(v - rho_target) < best_err:
            best_err, best_a = abs(v - rho_target), mid
        if v < rho_target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-13:
            break
    if best_err > tol:
        raise LatticeError(
            f"width solve for class {cls.label} at vf {rho_target:.4f} "
            f"missed tolerance ({best_err:.2e} > {tol:.0e})"
        )
    return best_a


def sample_class(cls: LatticeClass, n_samples: int) -> list[Microstructure]:
    """Uniformly spaced volume-fraction targets over the achievable range."""
    v_lo, v_hi = cls.vf_range
    out = []
    for rho in np.linspace(v_lo, v_hi, n_samples):
        try:
            a = solve_width_for_vf(cls, float(rho))
        except LatticeError as err:
            log.warning("skipping sample: %s", err)
            continue
        bm = rasterize(cls, a)
        out.append(Microstructure(cls.label, a, volume_fraction(bm), bm))
    return out


def sample_library(samples_per_class: int = 80, seed: int = 0,
                   catalog: dict[str, LatticeClass] | None = None) -> list[Microstructure]:
    """Geometry part of the library: every class sampled on a uniform
    volume-fraction grid. Deterministic; the seed only fixes downstream
    train/test splitting and is recorded by the caller."""
    if samples_per_class < 40:
        raise ValueError("need at least 40 samples per class")
    catalog = catalog or CATALOG
    records = []
    for label in sorted(catalog):
        records.extend(sample_class(catalog[label], samples_per_class))
    return records


_SIDES = {"right": (1, -1, 0), "left": (1, 0, -1), "top": (0, -1, 0), "bottom": (0, 0, -1)}


def boundary_compatibility(m1, m2, side: str = "right") -> float:
    """Fraction of solid pixels on m1's shared edge that meet solid pixels on
    the adjacent edge of m2 (m2 sits on ``side`` of m1). 1.0 when m1's edge
    carries no material. Assembly-time audit, not a constraint."""
    b1 = m1.bitmap if isinstance(m1, Microstructure) else np.asarray(m1)
    b2 = m2.bitmap if isinstance(m2, Microstructure) else np.asarray(m2)
    if b1.shape != b2.shape:
        raise ValueError("bitmaps must have identical shape")
    try:
        axis, i1, i2 = _SIDES[side]
    except KeyError:
        raise ValueError(f"side must be one of {sorted(_SIDES)}") from None
    e1 = np.take(b1, i1, axis=axis).astype(bool)
    e2 = np.take(b2, i2, axis=axis).astype(bool)
    n1 = int(e1.sum())
    if n1 == 0:
        return 1.0
    return float((e1 & e2).sum() / n1)
