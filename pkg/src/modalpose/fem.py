"""Linear-elastic tetrahedral FEM: lumped mass, stiffness and Rayleigh damping."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


class FemError(ValueError):
    pass


@dataclass(frozen=True)
class MaterialParams:
    """Isotropic Hookean material, SI units by default (soft tissue)."""

    youngs_modulus: float = 6000.0
    poisson_ratio: float = 0.49
    density: float = 1040.0

    def __post_init__(self):
        if not self.youngs_modulus > 0:
            raise FemError("youngs_modulus must be > 0")
        if not 0 < self.poisson_ratio < 0.5:
            raise FemError("poisson_ratio must lie in (0, 0.5)")
        if not self.density > 0:
            raise FemError("density must be > 0")

    @property
    def lame(self):
        E, nu = self.youngs_modulus, self.poisson_ratio
        lam = E * nu / ((1 + nu) * (1 - 2 * nu))
        mu = E / (2 * (1 + nu))
        return lam, mu

    def elasticity_matrix(self):
        """6x6 Voigt matrix for (xx, yy, zz, yz, xz, xy) with engineering shear."""
        lam, mu = self.lame
        D = np.zeros((6, 6))
        D[:3, :3] = lam
        D[np.arange(3), np.arange(3)] += 2 * mu
        D[np.arange(3, 6), np.arange(3, 6)] = mu
        return D


@dataclass(frozen=True, eq=False)
class FemSystem:
    """Anchored FEM matrices over the free DOFs.

    ``free_dof_map[3 * node + axis]`` is the free index, or -1 for anchored DOFs.
    Damping is Rayleigh: C = xi * M + zeta * K.
    """

    mass_diag: np.ndarray
    stiffness: sp.csr_matrix
    xi: float = 0.1
    zeta: float = 0.01
    free_dof_map: np.ndarray = None

    def __post_init__(self):
        mass = np.asarray(self.mass_diag, dtype=np.float64)
        K = sp.csr_matrix(self.stiffness, dtype=np.float64)
        if K.shape != (len(mass), len(mass)):
            raise FemError("stiffness shape does not match mass_diag")
        if np.any(mass <= 0):
            raise FemError("lumped mass entries must be positive")
        fmap = self.free_dof_map
        if fmap is None:
            fmap = np.arange(len(mass))
        fmap = np.asarray(fmap, dtype=np.int64)
        object.__setattr__(self, "mass_diag", mass)
        object.__setattr__(self, "stiffness", K)
        object.__setattr__(self, "free_dof_map", fmap)

    @property
    def n_free(self):
        return len(self.mass_diag)

    @property
    def free_dofs(self):
        """Full-space DOF index of every free DOF, in free order."""
        return np.flatnonzero(self.free_dof_map >= 0)

    @property
    def mass(self):
        return sp.diags(self.mass_diag, format="csr")

    def damping_matrix(self):
        return (self.xi * self.mass + self.zeta * self.stiffness).tocsr()


def shape_gradients(tet_nodes):
    """Constant gradients of the 4 linear shape functions, shape (4, 3), and the volume."""
    X = np.asarray(tet_nodes, dtype=np.float64)
    Dm = (X[1:] - X[0]).T
    vol = np.linalg.det(Dm) / 6.0
    if vol <= 0:
        raise FemError(f"non-positive tet volume {vol:.3g}")
    G = np.empty((4, 3))
    G[1:] = np.linalg.inv(Dm)
    G[0] = -G[1:].sum(axis=0)
    return G, vol


def strain_displacement(grads):
    B = np.zeros((6, 12))
    for a in range(4):
        gx, gy, gz = grads[a]
        c = 3 * a
        B[0, c] = gx
        B[1, c + 1] = gy
        B[2, c + 2] = gz
        B[3, c + 1], B[3, c + 2] = gz, gy
        B[4, c], B[4, c + 2] = gz, gx
        B[5, c], B[5, c + 1] = gy, gx
    return B


def element_stiffness(tet_nodes, material=MaterialParams()):
    """12x12 constant-strain tet stiffness, DOFs ordered (x0, y0, z0, x1, ...)."""
    G, vol = shape_gradients(tet_nodes)
    B = strain_displacement(G)
    Ke = vol * B.T @ material.elasticity_matrix() @ B
    return 0.5 * (Ke + Ke.T)


def _canonical_order(tets):
    # summation order fixed by node content, not by the order tets are listed
    keys = np.sort(tets, axis=1)
    return np.lexsort(keys.T[::-1])


def lumped_mass(mesh, material=MaterialParams()):
    """Per-node lumped mass (density * volume / 4 from each incident tet)."""
    tets = mesh.tets[_canonical_order(mesh.tets)]
    share = material.density * mesh.volumes[_canonical_order(mesh.tets)] / 4.0
    m = np.zeros(mesh.n_nodes)
    for a in range(4):
        np.add.at(m, tets[:, a], share)
    return m


def assemble_stiffness(mesh, material=MaterialParams()):
    """Unanchored global stiffness over all 3n DOFs."""
    tets = mesh.tets[_canonical_order(mesh.tets)]
    n3 = 3 * mesh.n_nodes
    local = np.arange(3)
    rows, cols, vals = [], [], []
    for t in tets:
        Ke = element_stiffness(mesh.nodes[t], material)
        dofs = (3 * t[:, None] + local).ravel()
        rows.append(np.repeat(dofs, 12))
        cols.append(np.tile(dofs, 12))
        vals.append(Ke.ravel())
    if not rows:
        return sp.csr_matrix((n3, n3))
    K = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n3, n3)
    ).tocsr()
    K.sum_duplicates()
    return K


def free_dof_map(n_nodes, anchors):
    fixed = np.zeros(3 * n_nodes, dtype=bool)
    for a in np.asarray(anchors, dtype=np.int64):
        fixed[3 * a : 3 * a + 3] = True
    fmap = np.full(3 * n_nodes, -1, dtype=np.int64)
    fmap[~fixed] = np.arange(int((~fixed).sum()))
    return fmap


def assemble(mesh, material=MaterialParams(), xi=0.1, zeta=0.01):
    """Build the anchored FemSystem by deleting anchor rows and columns."""
    if len(mesh.anchor_nodes) == 0:
        raise FemError("no anchor nodes: the stiffness matrix keeps its rigid-body modes")
    K = assemble_stiffness(mesh, material)
    m = np.repeat(lumped_mass(mesh, material), 3)
    fmap = free_dof_map(mesh.n_nodes, mesh.anchor_nodes)
    free = np.flatnonzero(fmap >= 0)
    return FemSystem(m[free], K[free][:, free].tocsr(), float(xi), float(zeta), fmap)


def rigid_body_modes(nodes):
    """(3n, 6) matrix: three translations and three linearised rotations about the centroid."""
    X = np.asarray(nodes, dtype=np.float64)
    c = X - X.mean(axis=0)
    n = len(X)
    R = np.zeros((3 * n, 6))
    for ax in range(3):
        R[ax::3, ax] = 1.0
    for ax in range(3):
        w = np.zeros(3)
        w[ax] = 1.0
        R[:, 3 + ax] = np.cross(w, c).ravel()
    return R
