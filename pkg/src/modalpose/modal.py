"""Modal reduction of the anchored FEM system and reduced-space operations.

With lumped (diagonal) mass the generalized problem K phi = lambda M phi is
solved as the standard symmetric problem on M^-1/2 K M^-1/2, keeping the
``r`` lowest modes. Each retained mode then evolves as an independent damped
oscillator  q'' + (xi + zeta*lambda) q' + lambda q = (Phi^T f).
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .fem import FemSystem, shape_gradients


class ModalError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class ModalBasis:
    """Truncated, M-orthonormal mode set.

    Attributes
    ----------
    phi : (n_free, r) mode shapes over free DOFs
    eigenvalues : (r,) ascending
    mass_diag : (n_free,) lumped mass carried for orthogonality checks
    free_dof_map : (3 * n_nodes,) free index per full DOF, -1 when anchored
    curl_basis : optional (3, n_nodes, r); node rotation vectors are ``curl_basis @ q``
    """

    phi: np.ndarray
    eigenvalues: np.ndarray
    xi: float
    zeta: float
    mass_diag: np.ndarray
    free_dof_map: np.ndarray
    curl_basis: np.ndarray | None = None

    @property
    def n_modes(self):
        return self.phi.shape[1]

    @property
    def n_free(self):
        return self.phi.shape[0]

    @property
    def n_nodes(self):
        return len(self.free_dof_map) // 3

    @property
    def free_dofs(self):
        return np.flatnonzero(self.free_dof_map >= 0)

    @property
    def modal_damping(self):
        return self.xi + self.zeta * self.eigenvalues

    def full_modes(self):
        """(3 * n_nodes, r) mode matrix with zero rows at anchored DOFs."""
        out = np.zeros((len(self.free_dof_map), self.n_modes))
        out[self.free_dofs] = self.phi
        return out

    def truncated(self, r):
        curl = None if self.curl_basis is None else self.curl_basis[:, :, :r]
        return ModalBasis(
            self.phi[:, :r], self.eigenvalues[:r], self.xi, self.zeta,
            self.mass_diag, self.free_dof_map, curl,
        )

    def to_bytes(self):
        return _encode_basis(self)

    @classmethod
    def from_bytes(cls, data):
        return _decode_basis(data)

    def fingerprint(self):
        return hashlib.sha256(self.to_bytes()).hexdigest()


@dataclass
class ModalState:
    q: np.ndarray
    q_dot: np.ndarray = None
    time: float = 0.0

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=np.float64).copy()
        if self.q_dot is None:
            self.q_dot = np.zeros_like(self.q)
        self.q_dot = np.asarray(self.q_dot, dtype=np.float64).copy()
        if self.q.shape != self.q_dot.shape:
            raise ValueError("q and q_dot must have the same length")

    @classmethod
    def zeros(cls, r):
        return cls(np.zeros(r), np.zeros(r), 0.0)


def _apply_sign_convention(V):
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def solve_modes(system: FemSystem, num_modes: int, mesh=None) -> ModalBasis:
    """Lowest ``num_modes`` eigenpairs of K phi = lambda M phi.

    Passing ``mesh`` also builds the curl basis used for modal warping.
    """
    n = system.n_free
    if not 1 <= num_modes <= n:
        raise ModalError(f"num_modes must be in 1..{n}, got {num_modes}")
    inv_sqrt_m = 1.0 / np.sqrt(system.mass_diag)
    A = system.stiffness.toarray()
    A = inv_sqrt_m[:, None] * A * inv_sqrt_m[None, :]
    A = 0.5 * (A + A.T)
    try:
        lam, V = scipy.linalg.eigh(A, subset_by_index=[0, num_modes - 1], driver="evr")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise ModalError(f"eigensolver failed: {exc}") from exc
    residual = np.abs(A @ V - V * lam).max() if n else 0.0
    scale = max(np.abs(A).max(), 1.0) if n else 1.0
    if not np.isfinite(residual) or residual > 1e-6 * scale:
        raise ModalError(f"eigensolver did not converge (residual {residual:.3g})")
    if lam[0] <= 1e-12 * scale:
        raise ModalError(f"stiffness is not positive definite (lowest eigenvalue {lam[0]:.3g})")
    phi = _apply_sign_convention(inv_sqrt_m[:, None] * V)
    basis = ModalBasis(
        np.ascontiguousarray(phi), lam.copy(), system.xi, system.zeta,
        system.mass_diag.copy(), system.free_dof_map.copy(),
    )
    if mesh is not None:
        basis = ModalBasis(
            basis.phi, basis.eigenvalues, basis.xi, basis.zeta, basis.mass_diag,
            basis.free_dof_map, curl_basis(mesh, basis),
        )
    return basis


def orthogonality_report(basis: ModalBasis, system: FemSystem):
    """Max-abs deviations of Phi^T M Phi from I and of Phi^T K Phi from Lambda."""
    phi = basis.phi
    mtm = phi.T @ (system.mass_diag[:, None] * phi)
    ktk = phi.T @ (system.stiffness @ phi)
    lam_max = float(np.abs(basis.eigenvalues).max())
    off = ktk - np.diag(np.diag(ktk))
    residual = system.stiffness @ phi - system.mass_diag[:, None] * phi * basis.eigenvalues
    return {
        "n_modes": basis.n_modes,
        "n_free": basis.n_free,
        "mass_orthonormality_max": float(np.abs(mtm - np.eye(basis.n_modes)).max()),
        "stiffness_offdiag_rel": float(np.abs(off).max() / lam_max),
        "stiffness_diag_rel": float(np.abs(np.diag(ktk) - basis.eigenvalues).max() / lam_max),
        "residual_rel": float(np.abs(residual).max() / abs(system.stiffness).max()),
        "lambda_min": float(basis.eigenvalues[0]),
        "lambda_max": float(basis.eigenvalues[-1]),
    }


def modal_force(basis: ModalBasis, f) -> np.ndarray:
    """Project a free-DOF force vector onto the modes (Phi^T f)."""
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (basis.n_free,):
        raise ValueError(f"force must have length {basis.n_free}, got shape {f.shape}")
    return basis.phi.T @ f


def _oscillator_step(lam, c, x0, v0, dt):
    """Exact homogeneous solution of x'' + c x' + lam x = 0 over dt, vectorised per mode."""
    a = 0.5 * c
    disc = a * a - lam
    x1 = np.empty_like(x0)
    v1 = np.empty_like(v0)

    under = disc < 0
    if np.any(under):
        aa, xx, vv, ll = a[under], x0[under], v0[under], lam[under]
        w = np.sqrt(-disc[under])
        e = np.exp(-aa * dt)
        cs, sn = np.cos(w * dt), np.sin(w * dt)
        x1[under] = e * (xx * cs + (vv + aa * xx) * sn / w)
        v1[under] = e * (vv * cs - (aa * vv + ll * xx) * sn / w)

    over = disc > 0
    if np.any(over):
        aa, xx, vv, ll = a[over], x0[over], v0[over], lam[over]
        mu = np.sqrt(disc[over])
        ep = np.exp((mu - aa) * dt)
        em = np.exp(-(mu + aa) * dt)
        ch = 0.5 * (ep + em)
        sh_mu = 0.5 * (ep - em) / mu
        # near-critical modes: avoid cancellation in ep - em
        near = mu * dt < 0.5
        sh_mu[near] = np.exp(-aa[near] * dt) * np.sinh(mu[near] * dt) / mu[near]
        x1[over] = xx * ch + (vv + aa * xx) * sh_mu
        v1[over] = vv * ch - (aa * vv + ll * xx) * sh_mu

    crit = disc == 0
    if np.any(crit):
        aa, xx, vv, ll = a[crit], x0[crit], v0[crit], lam[crit]
        e = np.exp(-aa * dt)
        x1[crit] = e * (xx + (vv + aa * xx) * dt)
        v1[crit] = e * (vv - (aa * vv + ll * xx) * dt)
    return x1, v1


def step_modal(basis: ModalBasis, state: ModalState, modal_force, dt: float) -> ModalState:
    """Advance every mode by ``dt`` with the force held constant (exact per step)."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    lam = basis.eigenvalues
    g = np.asarray(modal_force, dtype=np.float64)
    if g.shape != lam.shape or state.q.shape != lam.shape:
        raise ValueError("state and modal force must have one entry per mode")
    q_static = g / lam
    x1, v1 = _oscillator_step(lam, basis.modal_damping, state.q - q_static, state.q_dot, dt)
    return ModalState(x1 + q_static, v1, state.time + dt)


def constraint_rows(basis: ModalBasis, nodes):
    """Free-DOF indices of the x and y DOFs of each constraint node, interleaved."""
    nodes = np.asarray(nodes, dtype=np.int64)
    full = (3 * nodes[:, None] + np.arange(2)).ravel()
    rows = basis.free_dof_map[full]
    if np.any(rows < 0):
        bad = nodes[(rows < 0).reshape(-1, 2).any(axis=1)]
        raise ModalError(f"constraint nodes {bad.tolist()} are anchored")
    return rows


def solve_constrained_pose(basis: ModalBasis, constraints, eps: float = 1e-6) -> ModalState:
    """Modal coordinates meeting in-plane node displacements in the least-squares sense.

    ``constraints`` is a sequence of ``(node_id, (dx, dy))``. The solution
    minimises ||Phi_c q - u_c||^2 + eps * q^T Lambda q, where Phi_c holds the x/y
    rows of the constraint nodes.
    """
    if eps < 0:
        raise ValueError("eps must be non-negative")
    nodes = [int(c[0]) for c in constraints]
    u_c = np.asarray([c[1] for c in constraints], dtype=np.float64).reshape(-1)
    phi_c = basis.phi[constraint_rows(basis, nodes)]
    A = phi_c.T @ phi_c + eps * np.diag(basis.eigenvalues)
    b = phi_c.T @ u_c
    ev = np.linalg.eigvalsh(A)
    if ev[0] <= 1e-13 * max(ev[-1], np.finfo(float).tiny):
        raise ModalError(
            "normal matrix is singular: more modes than constrained DOFs; use eps > 0"
        )
    q = scipy.linalg.solve(A, b, assume_a="pos")
    return ModalState(q, np.zeros_like(q), 0.0)


def linear_displacements(basis: ModalBasis, q) -> np.ndarray:
    u = np.zeros(len(basis.free_dof_map))
    u[basis.free_dofs] = basis.phi @ np.asarray(q, dtype=np.float64)
    return u.reshape(-1, 3)


def rotation_matrices(w):
    """Rodrigues exp([w]x) for an (n, 3) array of rotation vectors."""
    theta = np.linalg.norm(w, axis=1)
    small = theta < 1e-8
    th = np.where(small, 1.0, theta)
    # series for tiny angles keeps the second-order term exact enough
    s = np.where(small, 1.0 - theta**2 / 6.0, np.sin(th) / th)
    c = np.where(small, 0.5 - theta**2 / 24.0, (1.0 - np.cos(th)) / th**2)
    W = np.zeros((len(w), 3, 3))
    W[:, 0, 1], W[:, 0, 2] = -w[:, 2], w[:, 1]
    W[:, 1, 0], W[:, 1, 2] = w[:, 2], -w[:, 0]
    W[:, 2, 0], W[:, 2, 1] = -w[:, 1], w[:, 0]
    I = np.broadcast_to(np.eye(3), W.shape)
    return I + s[:, None, None] * W + c[:, None, None] * (W @ W)


def reconstruct(basis: ModalBasis, state, warp: bool = False) -> np.ndarray:
    """Per-node (n_nodes, 3) displacements from modal coordinates.

    Without warping this is Phi q with zeros at anchors. With warping each
    node's linear displacement is rotated by exp([w]x), w = curl_basis @ q.
    """
    q = state.q if isinstance(state, ModalState) else np.asarray(state, dtype=np.float64)
    u = linear_displacements(basis, q)
    if not warp:
        return u
    if basis.curl_basis is None:
        raise ModalError("warped reconstruction needs a basis built with a curl basis")
    w = np.einsum("anr,r->na", basis.curl_basis, q)
    return np.einsum("nij,nj->ni", rotation_matrices(w), u)


def curl_basis(mesh, basis: ModalBasis) -> np.ndarray:
    """Per-node rotation vectors (half curl) of each mode, volume-averaged over incident tets."""
    modes = basis.full_modes().reshape(mesh.n_nodes, 3, basis.n_modes)
    out = np.zeros((3, mesh.n_nodes, basis.n_modes))
    weight = np.zeros(mesh.n_nodes)
    for t in mesh.tets:
        G, vol = shape_gradients(mesh.nodes[t])
        # grad[i, j, r] = d u_i / d x_j for mode r
        grad = np.einsum("air,aj->ijr", modes[t], G)
        rot = 0.5 * np.stack([
            grad[2, 1] - grad[1, 2],
            grad[0, 2] - grad[2, 0],
            grad[1, 0] - grad[0, 1],
        ])
        for node in t:
            out[:, node] += vol * rot
            weight[node] += vol
    return out / weight[None, :, None]


_MAGIC = b"MPBASIS1"
_HEADER = struct.Struct("<8sQQQddB7x")


def _encode_basis(basis: ModalBasis) -> bytes:
    has_curl = basis.curl_basis is not None
    parts = [
        _HEADER.pack(
            _MAGIC, basis.n_modes, basis.n_free, basis.n_nodes,
            float(basis.xi), float(basis.zeta), int(has_curl),
        ),
        np.ascontiguousarray(basis.free_dof_map, dtype="<i8").tobytes(),
        np.ascontiguousarray(basis.mass_diag, dtype="<f8").tobytes(),
        np.ascontiguousarray(basis.eigenvalues, dtype="<f8").tobytes(),
        np.asarray(basis.phi, dtype="<f8").tobytes(order="F"),
    ]
    if has_curl:
        parts.append(np.ascontiguousarray(basis.curl_basis, dtype="<f8").tobytes())
    return b"".join(parts)


def _decode_basis(data: bytes) -> ModalBasis:
    if len(data) < _HEADER.size:
        raise ModalError("basis artifact truncated (header)")
    magic, r, n_free, n_nodes, xi, zeta, has_curl = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise ModalError("not a modal basis artifact")
    sizes = [3 * n_nodes * 8, n_free * 8, r * 8, n_free * r * 8]
    if has_curl:
        sizes.append(3 * n_nodes * r * 8)
    if len(data) != _HEADER.size + sum(sizes):
        raise ModalError(f"basis artifact has {len(data)} bytes, expected {_HEADER.size + sum(sizes)}")
    off = _HEADER.size

    def take(nbytes, dtype):
        nonlocal off
        arr = np.frombuffer(data, dtype=dtype, count=nbytes // 8, offset=off).copy()
        off += nbytes
        return arr

    fmap = take(sizes[0], "<i8").astype(np.int64)
    mass = take(sizes[1], "<f8").astype(np.float64)
    lam = take(sizes[2], "<f8").astype(np.float64)
    phi = np.ascontiguousarray(take(sizes[3], "<f8").astype(np.float64).reshape((n_free, r), order="F"))
    curl = take(sizes[4], "<f8").astype(np.float64).reshape(3, n_nodes, r) if has_curl else None
    return ModalBasis(phi, lam, xi, zeta, mass, fmap, curl)


def save_basis(basis: ModalBasis, path):
    with open(path, "wb") as fh:
        fh.write(basis.to_bytes())


def load_basis(path) -> ModalBasis:
    with open(path, "rb") as fh:
        return ModalBasis.from_bytes(fh.read())
