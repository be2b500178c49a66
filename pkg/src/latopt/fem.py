"""Macroscale finite-element machinery: quad4 mesh, element matrix bases,
global assembly and the generalized eigensolution."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .homogenization import BaseMaterial

log = logging.getLogger(__name__)

# deterministic ARPACK start vector (seeded once; PCG64 streams are stable)
_V0_SEED = 20240


class EigenSolveError(RuntimeError):
    """Sparse eigensolver failed to factorize or converge."""


@dataclass(frozen=True)
class Mesh:
    """Uniform rectangular quad4 mesh.

    Nodes and elements are numbered row-major from the bottom-left corner:
    node(i, j) = j*(nx+1) + i and element(i, j) = j*nx + i, with i along x
    and j along y. Each element's DOFs are interleaved (ux, uy) over its
    counter-clockwise corner nodes.
    """

    nx: int
    ny: int
    Lx: float
    Ly: float

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1 or self.Lx <= 0 or self.Ly <= 0:
            raise ValueError("mesh needs positive element counts and dimensions")

    @property
    def hx(self) -> float:
        return self.Lx / self.nx

    @property
    def hy(self) -> float:
        return self.Ly / self.ny

    @property
    def n_nodes(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    @property
    def n_dof(self) -> int:
        return 2 * self.n_nodes

    @property
    def n_elements(self) -> int:
        return self.nx * self.ny

    def node_id(self, i, j):
        return j * (self.nx + 1) + i

    @property
    def node_xy(self) -> np.ndarray:
        jj, ii = np.meshgrid(np.arange(self.ny + 1), np.arange(self.nx + 1), indexing="ij")
        return np.column_stack([ii.ravel() * self.hx, jj.ravel() * self.hy])

    @property
    def connectivity(self) -> np.ndarray:
        ii, jj = np.meshgrid(np.arange(self.nx), np.arange(self.ny))
        n00 = self.node_id(ii, jj)
        return np.stack([n00, n00 + 1, n00 + self.nx + 2, n00 + self.nx + 1],
                        axis=-1).reshape(-1, 4)

    @property
    def edof(self) -> np.ndarray:
        conn = self.connectivity
        e = np.empty((conn.shape[0], 8), dtype=np.int64)
        e[:, 0::2] = 2 * conn
        e[:, 1::2] = 2 * conn + 1
        return e

    @property
    def element_centers(self) -> np.ndarray:
        ii, jj = np.meshgrid(np.arange(self.nx), np.arange(self.ny))
        return np.column_stack([(ii.ravel() + 0.5) * self.hx,
                                (jj.ravel() + 0.5) * self.hy])

    def nearest_node(self, x: float, y: float) -> int:
        i = int(round(np.clip(x / self.hx, 0, self.nx)))
        j = int(round(np.clip(y / self.hy, 0, self.ny)))
        return self.node_id(i, j)


@dataclass
class BoundarySpec:
    """Fixed DOFs plus concentrated nodal masses."""

    fixed_dofs: np.ndarray
    point_masses: list[tuple[int, float]] = field(default_factory=list)

    def __post_init__(self):
        self.fixed_dofs = np.unique(np.asarray(self.fixed_dofs, dtype=np.int64))
        for node, kg in self.point_masses:
            if kg < 0:
                raise ValueError(f"negative point mass at node {node}")

    def validate(self, mesh: Mesh) -> None:
        if self.fixed_dofs.size and (self.fixed_dofs.min() < 0
                                     or self.fixed_dofs.max() >= mesh.n_dof):
            raise ValueError("fixed DOFs outside the mesh")
        for node, _ in self.point_masses:
            if not (0 <= node < mesh.n_nodes):
                raise ValueError(f"point-mass node {node} outside the mesh")


BC_PRESETS = ("clamped-both-ends", "pinned-both-ends", "cantilever-left")


def boundary_from_preset(mesh: Mesh, preset: str,
                         point_masses: list[tuple[int, float]] | None = None) -> BoundarySpec:
    """Named supports: clamped edges fix both DOFs along the full end edge;
    the pinned preset fixes both DOFs of the two bottom corner nodes."""
    j = np.arange(mesh.ny + 1)
    left = mesh.node_id(0, j)
    right = mesh.node_id(mesh.nx, j)
    if preset == "clamped-both-ends":
        nodes = np.concatenate([left, right])
    elif preset == "cantilever-left":
        nodes = left
    elif preset == "pinned-both-ends":
        nodes = np.array([mesh.node_id(0, 0), mesh.node_id(mesh.nx, 0)])
    else:
        raise ValueError(f"unknown boundary preset {preset!r}; choose from {BC_PRESETS}")
    fixed = np.concatenate([2 * nodes, 2 * nodes + 1])
    return BoundarySpec(fixed, point_masses or [])


@dataclass
class ElementBasis:
    """Constant element matrices: stiffness derivatives w.r.t. the six
    stiffness entries (per unit modulus) and the solid consistent mass."""

    B: np.ndarray        # (6, 8, 8), k_e(C) = sum_i C_i * B[i]
    m_solid: np.ndarray  # (8, 8)
    mesh: Mesh
    material: BaseMaterial


# single-entry indicator matrices in (C11, C12, C13, C22, C23, C33) order,
# symmetrized for the off-diagonal entries
_ENTRY_BASES = np.zeros((6, 3, 3))
for _k, (_p, _q) in enumerate([(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]):
    _ENTRY_BASES[_k, _p, _q] = 1.0
    _ENTRY_BASES[_k, _q, _p] = 1.0


def element_basis(mesh: Mesh, material: BaseMaterial, thickness: float = 1.0) -> ElementBasis:
    """2x2 Gauss quadrature of the quad4 B^T E_i B forms and the consistent
    mass matrix at the solid density."""
    hx, hy = mesh.hx, mesh.hy
    gp = np.array([-1.0, 1.0]) / np.sqrt(3.0)
    xiN = np.array([-1.0, 1.0, 1.0, -1.0])
    etN = np.array([-1.0, -1.0, 1.0, 1.0])
    B6 = np.zeros((6, 8, 8))
    m = np.zeros((8, 8))
    detJ = hx * hy / 4.0
    for xi in gp:
        for et in gp:
            dNdx = 0.25 * xiN * (1.0 + et * etN) * 2.0 / hx
            dNdy = 0.25 * etN * (1.0 + xi * xiN) * 2.0 / hy
            Bm = np.zeros((3, 8))
            Bm[0, 0::2] = dNdx
            Bm[1, 1::2] = dNdy
            Bm[2, 0::2] = dNdy
            Bm[2, 1::2] = dNdx
            for k in range(6):
                B6[k] += Bm.T @ _ENTRY_BASES[k] @ Bm * (detJ * thickness)
            N = 0.25 * (1.0 + xi * xiN) * (1.0 + et * etN)
            Nm = np.zeros((2, 8))
            Nm[0, 0::2] = N
            Nm[1, 1::2] = N
            m += Nm.T @ Nm * (material.rho0 * detJ * thickness)
    return ElementBasis(B6, m, mesh, material)


def element_stiffness(basis: ElementBasis, Y: np.ndarray, f: float = 1.0) -> np.ndarray:
    """Penalized element stiffness f * sum_i Y_i B_i (Y in Pa)."""
    return f * np.einsum("i,ijk->jk", np.asarray(Y, float), basis.B)


def element_mass(basis: ElementBasis, rho_tilde: float) -> np.ndarray:
    """Element mass scales linearly with the solid fraction."""
    return rho_tilde * basis.m_solid


def assemble(mesh: Mesh, bcs: BoundarySpec, basis: ElementBasis,
             stiffness_entries: np.ndarray, rho_tilde: np.ndarray
             ) -> tuple[sp.csc_matrix, sp.csc_matrix, np.ndarray]:
    """Global K, M on the free DOFs.

    stiffness_entries : (N, 6) per-element entries in Pa with any stiffness
        penalization already applied.
    rho_tilde : (N,) filtered solid fractions scaling the element mass.

    Returns (K, M, free_dofs); fixed DOFs are removed by row/column
    elimination and point masses are added to both translational DOFs of
    their node.
    """
    bcs.validate(mesh)
    N = mesh.n_elements
    Y = np.asarray(stiffness_entries, float)
    rt = np.asarray(rho_tilde, float)
    if Y.shape != (N, 6) or rt.shape != (N,):
        raise ValueError("design arrays do not match the mesh size")

    edof = mesh.edof
    rows = np.repeat(edof, 8, axis=1).ravel()
    cols = np.tile(edof, (1, 8)).ravel()
    kdata = (Y @ basis.B.reshape(6, 64)).ravel()
    mdata = (rt[:, None] * basis.m_solid.ravel()[None, :]).ravel()
    K = sp.coo_matrix((kdata, (rows, cols)), shape=(mesh.n_dof, mesh.n_dof)).tocsc()
    M = sp.coo_matrix((mdata, (rows, cols)), shape=(mesh.n_dof, mesh.n_dof)).tocsc()

    if bcs.point_masses:
        pm_dofs, pm_vals = [], []
        for node, kg in bcs.point_masses:
            pm_dofs += [2 * node, 2 * node + 1]
            pm_vals += [kg, kg]
        M = M + sp.coo_matrix((pm_vals, (pm_dofs, pm_dofs)),
                              shape=(mesh.n_dof, mesh.n_dof)).tocsc()

    free = np.setdiff1d(np.arange(mesh.n_dof), bcs.fixed_dofs)
    return K[np.ix_(free, free)].tocsc(), M[np.ix_(free, free)].tocsc(), free


@dataclass
class EigenSolution:
    """Ascending frequencies with M-normalized modes and solve residuals."""

    omegas: np.ndarray      # (k,) rad/s
    modes: np.ndarray       # (n_free, k)
    residuals: np.ndarray   # (k,) ||(K - w^2 M)u|| / ||K u||

    @property
    def omega1(self) -> float:
        return float(self.omegas[0])


def solve_eigs(K: sp.spmatrix, M: sp.spmatrix, k_lowest: int = 4) -> EigenSolution:
    """k lowest eigenpairs of (K - w^2 M) u = 0 by shift-invert iteration.

    Shift 0 after boundary elimination, with one retry at a small positive
    shift; small systems fall back to a dense solve. Modes are returned
    M-normalized.
    """
    if not (1 <= k_lowest <= 6):
        raise ValueError("k_lowest must be in [1, 6]")
    n = K.shape[0]
    k = min(k_lowest, max(n - 1, 1))
    if n <= max(2 * k + 1, 8):
        lam, vecs = sla_dense_eig(K, M)
        lam, vecs = lam[:k], vecs[:, :k]
    else:
        rng = np.random.default_rng(_V0_SEED)
        v0 = rng.standard_normal(n)
        try:
            lam, vecs = spla.eigsh(K.tocsc(), k=k, M=M.tocsc(), sigma=0.0,
                                   which="LM", v0=v0)
        except Exception as first_err:  # singular K at zero shift
            scale = float(abs(K.diagonal()).max())
            try:
                lam, vecs = spla.eigsh(K.tocsc(), k=k, M=M.tocsc(),
                                       sigma=1e-8 * scale, which="LM", v0=v0)
            except Exception as err:
                raise EigenSolveError(f"shift-invert eigensolve failed: {err}") from first_err
    order = np.argsort(lam)
    lam = np.real(lam[order])
    vecs = np.real(vecs[:, order])
    for j in range(vecs.shape[1]):
        nrm = float(vecs[:, j] @ (M @ vecs[:, j]))
        if nrm <= 0:
            raise EigenSolveError("mode with nonpositive M-norm (M not PD?)")
        vecs[:, j] /= np.sqrt(nrm)
    res = np.empty(len(lam))
    for j in range(len(lam)):
        Ku = K @ vecs[:, j]
        res[j] = np.linalg.norm(Ku - lam[j] * (M @ vecs[:, j])) / max(np.linalg.norm(Ku), 1e-300)
    omegas = np.sqrt(np.maximum(lam, 0.0))
    return EigenSolution(omegas, vecs, res)


def sla_dense_eig(K, M):
    import scipy.linalg as sla

    lam, vecs = sla.eigh(np.asarray(K.todense()), np.asarray(M.todense()))
    return lam, vecs


def multiplicity_check(sol: EigenSolution, rel_tol: float = 1e-3) -> bool:
    """True when the two lowest frequencies coincide within rel_tol (the
    eigenfrequency sensitivity formulas assume a simple eigenvalue)."""
    if len(sol.omegas) < 2:
        raise ValueError("need at least two computed frequencies")
    w1, w2 = sol.omegas[:2]
    return bool((w2 - w1) < rel_tol * max(w1, 1e-300))


def rayleigh_quotient(K, M, u) -> float:
    return float((u @ (K @ u)) / (u @ (M @ u)))


def dump_matrices(K: sp.spmatrix, M: sp.spmatrix, k_path, m_path) -> None:
    """Coordinate (row, col, value) text dump of the assembled system."""
    for mat, path in ((K, k_path), (M, m_path)):
        coo = mat.tocoo()
        with open(path, "w") as fh:
            fh.write(f"# {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
            for r, c, v in zip(coo.row, coo.col, coo.data):
                fh.write(f"{r} {c} {v:.17g}\n")
