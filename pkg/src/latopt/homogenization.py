"""Energy-based periodic homogenization of binary unit cells.

Every pixel of the bitmap is one bilinear plane-stress quadrilateral; void
pixels keep a small stiffness so the periodic system stays nonsingular.
Three unit macroscopic strain cases are equilibrated and the effective
stiffness entries follow from mutual strain energies of the corrected
fields.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

_SPLU_OPTS = {"SymmetricMode": True, "DiagPivotThresh": 0.001}


class DegenerateCellError(RuntimeError):
    """The unit-cell system could not be factorized."""


@dataclass(frozen=True)
class BaseMaterial:
    """Isotropic base material (plane stress)."""

    E: float = 201e9        # Young's modulus, Pa
    nu: float = 0.3         # Poisson ratio
    rho0: float = 2700.0    # mass density, kg/m^3

    def __post_init__(self):
        if self.E <= 0.0:
            raise ValueError("Young's modulus must be positive")
        if not (0.0 <= self.nu < 0.5):
            raise ValueError("Poisson ratio must be in [0, 0.5)")
        if self.rho0 <= 0.0:
            raise ValueError("density must be positive")

    @property
    def C(self) -> np.ndarray:
        """Plane-stress stiffness in Voigt form (xx, yy, xy)."""
        f = self.E / (1.0 - self.nu**2)
        return f * np.array([[1.0, self.nu, 0.0],
                             [self.nu, 1.0, 0.0],
                             [0.0, 0.0, (1.0 - self.nu) / 2.0]])


@dataclass(frozen=True)
class StiffnessTensor:
    """Six independent entries of the symmetric Voigt plane-stress matrix."""

    C11: float
    C12: float
    C13: float
    C22: float
    C23: float
    C33: float

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "StiffnessTensor":
        m = np.asarray(m, float)
        return cls(m[0, 0], m[0, 1], m[0, 2], m[1, 1], m[1, 2], m[2, 2])

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.C11, self.C12, self.C13],
                         [self.C12, self.C22, self.C23],
                         [self.C13, self.C23, self.C33]])

    @property
    def vector(self) -> np.ndarray:
        """(C11, C12, C13, C22, C23, C33) — the library/surrogate ordering."""
        return np.array([self.C11, self.C12, self.C13, self.C22, self.C23, self.C33])

    def scaled(self, factor: float) -> "StiffnessTensor":
        return StiffnessTensor(*(self.vector * factor))


def quad4_stiffness(C: np.ndarray, hx: float, hy: float, thickness: float = 1.0) -> np.ndarray:
    """8x8 bilinear quadrilateral stiffness by 2x2 Gauss quadrature."""
    gp = np.array([-1.0, 1.0]) / np.sqrt(3.0)
    xiN = np.array([-1.0, 1.0, 1.0, -1.0])
    etN = np.array([-1.0, -1.0, 1.0, 1.0])
    k = np.zeros((8, 8))
    detJ = hx * hy / 4.0
    for xi in gp:
        for et in gp:
            dNdx = 0.25 * xiN * (1.0 + et * etN) * 2.0 / hx
            dNdy = 0.25 * etN * (1.0 + xi * xiN) * 2.0 / hy
            B = np.zeros((3, 8))
            B[0, 0::2] = dNdx
            B[1, 1::2] = dNdy
            B[2, 0::2] = dNdy
            B[2, 1::2] = dNdx
            k += B.T @ C @ B * (detJ * thickness)
    return k


class _PeriodicCellFE:
    """Cached mesh/indexing data for one bitmap resolution."""

    def __init__(self, n: int):
        self.n = n
        h = 1.0 / n
        ii, jj = np.meshgrid(np.arange(n), np.arange(n))

        def nid(i, j):
            return (j % n) * n + (i % n)

        conn = np.stack([nid(ii, jj), nid(ii + 1, jj),
                         nid(ii + 1, jj + 1), nid(ii, jj + 1)], axis=-1).reshape(-1, 4)
        self.edof = np.empty((conn.shape[0], 8), dtype=np.int64)
        self.edof[:, 0::2] = 2 * conn
        self.edof[:, 1::2] = 2 * conn + 1
        self.rows = np.repeat(self.edof, 8, axis=1).ravel()
        self.cols = np.tile(self.edof, (1, 8)).ravel()
        self.ndof = 2 * n * n
        # affine corner displacements for the three unit strain cases,
        # relative to the element origin (rigid translations drop out)
        corners = np.array([[0, 0], [h, 0], [h, h], [0, h]], float)
        self.affine = np.zeros((3, 8))
        for c, (exx, eyy, gxy) in enumerate([(1, 0, 0), (0, 1, 0), (0, 0, 1)]):
            self.affine[c, 0::2] = exx * corners[:, 0] + 0.5 * gxy * corners[:, 1]
            self.affine[c, 1::2] = 0.5 * gxy * corners[:, 0] + eyy * corners[:, 1]


_FE_CACHE: dict[int, _PeriodicCellFE] = {}


def _cell_fe(n: int) -> _PeriodicCellFE:
    if n not in _FE_CACHE:
        _FE_CACHE[n] = _PeriodicCellFE(n)
    return _FE_CACHE[n]


def homogenize(bitmap: np.ndarray, material: BaseMaterial | None = None,
               void_stiffness_ratio: float = 1e-9) -> StiffnessTensor:
    """Effective plane-stress stiffness of a periodic binary cell (in Pa).

    Parameters
    ----------
    bitmap : (n, n) array, nonzero = solid.
    material : base material; defaults to the library material.
    void_stiffness_ratio : stiffness of the void phase relative to E,
        in (0, 1e-6].
    """
    material = material or BaseMaterial()
    bitmap = np.asarray(bitmap)
    if bitmap.ndim != 2 or bitmap.shape[0] != bitmap.shape[1]:
        raise ValueError("bitmap must be a square 2-D array")
    if not (0.0 < void_stiffness_ratio <= 1e-6):
        raise ValueError("void_stiffness_ratio must be in (0, 1e-6]")
    n = bitmap.shape[0]
    solid = bitmap.reshape(-1) != 0
    if not solid.any():
        log.warning("all-void bitmap: homogenized cell is degenerate (soft phase only)")

    fe = _cell_fe(n)
    h = 1.0 / n
    k0 = quad4_stiffness(material.C / material.E, h, h)  # unit-E element
    Ee = np.where(solid, 1.0, void_stiffness_ratio)

    data = (Ee[:, None] * k0.ravel()[None, :]).ravel()
    K = sp.coo_matrix((data, (fe.rows, fe.cols)), shape=(fe.ndof, fe.ndof)).tocsc()

    F = np.zeros((fe.ndof, 3))
    rep = np.repeat(Ee, 8)
    for c in range(3):
        fe_load = -(k0 @ fe.affine[c])
        np.add.at(F[:, c], fe.edof.ravel(), rep * np.tile(fe_load, solid.size))

    # pin one node to remove the rigid-translation kernel of the periodic cell
    keep = np.arange(2, fe.ndof)
    try:
        lu = spla.splu(K[keep][:, keep].tocsc(), permc_spec="MMD_AT_PLUS_A",
                       options=_SPLU_OPTS)
        Wk = lu.solve(F[keep])
    except RuntimeError as err:
        raise DegenerateCellError(f"unit-cell factorization failed: {err}") from err
    if not np.all(np.isfinite(Wk)):
        raise DegenerateCellError("unit-cell solve returned non-finite values")
    W = np.zeros((fe.ndof, 3))
    W[keep] = Wk

    CH = np.zeros((3, 3))
    U = [W[:, c][fe.edof] + fe.affine[c][None, :] for c in range(3)]
    for p in range(3):
        kp = (U[p] @ k0) * Ee[:, None]
        for q in range(p, 3):
            CH[p, q] = CH[q, p] = float(np.sum(kp * U[q]))
    # cell volume is 1 and thickness 1, so the mutual energies are the entries
    return StiffnessTensor.from_matrix(CH * material.E)


def normalize(C: StiffnessTensor, E: float) -> StiffnessTensor:
    """Entrywise division by the base Young's modulus."""
    if E <= 0.0:
        raise ValueError("E must be positive")
    return C.scaled(1.0 / E)


def elasticity_surface(C: StiffnessTensor, n_angles: int = 360) -> tuple[np.ndarray, np.ndarray]:
    """C11 of the stiffness rotated through uniformly spaced angles in [0, 2pi).

    Uses the full fourth-order tensor rotation of the Voigt plane-stress
    matrix (engineering shear convention).
    """
    if n_angles < 4:
        raise ValueError("need at least 4 angles")
    thetas = np.linspace(0.0, 2.0 * np.pi, n_angles, endpoint=False)
    m = C.matrix
    # With the engineering-shear Voigt convention the stiffness components map
    # one-to-one onto the tensor: C_ijkl = m[v(ij), v(kl)].
    vidx = {(0, 0): 0, (1, 1): 1, (0, 1): 2, (1, 0): 2}
    T = np.zeros((2, 2, 2, 2))
    for (i, j), p in vidx.items():
        for (k, l), q in vidx.items():
            T[i, j, k, l] = m[p, q]
    vals = np.empty(n_angles)
    for idx, th in enumerate(thetas):
        c, s = np.cos(th), np.sin(th)
        R = np.array([[c, -s], [s, c]])
        vals[idx] = np.einsum("ia,jb,kc,ld,abcd->ijkl", R, R, R, R, T)[0, 0, 0, 0]
    return thetas, vals


def downsample_bitmap(bitmap: np.ndarray, factor: int = 2) -> np.ndarray:
    """Block-average downsampling with an unbiased checkerboard tie-break."""
    b = np.asarray(bitmap, float)
    n = b.shape[0]
    if n % factor:
        raise ValueError("resolution not divisible by the downsampling factor")
    m = n // factor
    blocks = b.reshape(m, factor, m, factor).mean(axis=(1, 3))
    jj, ii = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
    tie = ((ii + jj) % 2).astype(bool)
    out = blocks > 0.5
    out |= (blocks == 0.5) & tie
    return out
