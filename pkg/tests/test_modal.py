import math

import numpy as np
import pytest
import scipy.linalg
import scipy.sparse as sp

from modalpose.fem import FemSystem, assemble
from modalpose.modal import (
    ModalBasis,
    ModalError,
    ModalState,
    load_basis,
    modal_force,
    orthogonality_report,
    reconstruct,
    save_basis,
    solve_constrained_pose,
    solve_modes,
    step_modal,
)

from oracles import dense_trajectory


def system_from(K, mass=None, xi=0.0, zeta=0.0):
    K = np.asarray(K, float)
    mass = np.ones(len(K)) if mass is None else np.asarray(mass, float)
    return FemSystem(mass, sp.csr_matrix(K), xi, zeta)


def single_mode(lam, xi=0.0, zeta=0.0):
    return solve_modes(system_from([[lam]], xi=xi, zeta=zeta), 1)


def test_diagonal_problem():
    basis = solve_modes(system_from(np.diag([1.0, 9.0])), 2)
    assert np.allclose(basis.eigenvalues, [1.0, 9.0])
    assert np.allclose(basis.phi, np.eye(2))


def test_two_by_two_coupled():
    basis = solve_modes(system_from([[2.0, -1.0], [-1.0, 2.0]]), 2)
    # characteristic polynomial (2 - l)^2 - 1 = 0 -> l = 1, 3
    assert np.allclose(basis.eigenvalues, [1.0, 3.0], atol=1e-14)
    s = 1 / math.sqrt(2)
    assert np.allclose(np.abs(basis.phi), s, atol=1e-14)
    assert basis.phi[0, 0] * basis.phi[1, 0] > 0
    assert basis.phi[0, 1] * basis.phi[1, 1] < 0


def test_fixture_residual_and_orthogonality(tongue_system, tongue_basis):
    K = tongue_system.stiffness
    phi, lam = tongue_basis.phi, tongue_basis.eigenvalues
    resid = K @ phi - tongue_system.mass_diag[:, None] * phi * lam
    assert np.abs(resid).max() <= 1e-8 * abs(K).max()
    rep = orthogonality_report(tongue_basis, tongue_system)
    assert rep["mass_orthonormality_max"] <= 1e-8
    assert rep["stiffness_offdiag_rel"] <= 1e-8
    assert np.all(np.diff(lam) > 0) and lam[0] > 0


def test_sign_convention(tongue_basis):
    phi = tongue_basis.phi
    idx = np.argmax(np.abs(phi), axis=0)
    assert np.all(phi[idx, np.arange(phi.shape[1])] > 0)


def test_num_modes_bounds(tongue_system):
    with pytest.raises(ModalError):
        solve_modes(tongue_system, 0)
    with pytest.raises(ModalError):
        solve_modes(tongue_system, tongue_system.n_free + 1)


def test_singular_stiffness_rejected():
    with pytest.raises(ModalError, match="positive definite"):
        solve_modes(system_from([[1.0, -1.0], [-1.0, 1.0]]), 1)


def test_modal_force(tongue_system, tongue_basis, rng):
    assert np.array_equal(modal_force(tongue_basis, np.zeros(tongue_basis.n_free)), np.zeros(30))
    for i in (0, 5, 29):
        f = tongue_system.mass_diag * tongue_basis.phi[:, i]
        e = np.zeros(30)
        e[i] = 1.0
        assert np.abs(modal_force(tongue_basis, f) - e).max() <= 1e-8
    f = rng.normal(size=tongue_basis.n_free)
    dense = np.array([sum(tongue_basis.phi[k, j] * f[k] for k in range(len(f))) for j in range(30)])
    assert np.allclose(modal_force(tongue_basis, f), dense, rtol=1e-12, atol=1e-12 * np.abs(dense).max())
    with pytest.raises(ValueError):
        modal_force(tongue_basis, np.zeros(3))


def test_analytic_oscillator():
    basis = single_mode(4.0)
    n = 1000
    dt = math.pi / n
    state = ModalState([1.0], [0.0])
    for _ in range(n):
        state = step_modal(basis, state, [0.0], dt)
    assert state.time == pytest.approx(math.pi)
    assert abs(state.q[0] - math.cos(2 * math.pi)) <= 1e-6
    assert abs(state.q_dot[0]) <= 1e-6


def test_zero_state_stays_zero(tongue_basis):
    state = step_modal(tongue_basis, ModalState.zeros(30), np.zeros(30), 0.01)
    assert np.array_equal(state.q, np.zeros(30)) and np.array_equal(state.q_dot, np.zeros(30))


@pytest.mark.parametrize("lam, xi, zeta", [(4.0, 0.5, 0.0), (4.0, 4.0, 0.0), (4.0, 10.0, 0.1), (900.0, 0.1, 0.01)])
def test_damped_step_matches_matrix_exponential(lam, xi, zeta):
    basis = single_mode(lam, xi, zeta)
    c = xi + zeta * lam
    g = 0.7
    A = np.array([[0.0, 1.0, 0.0], [-lam, -c, g], [0.0, 0.0, 0.0]])
    dt = 0.05
    E = scipy.linalg.expm(A * dt)
    z = np.array([0.3, -1.2, 1.0])
    state = ModalState([0.3], [-1.2])
    energy = 0.5 * (state.q_dot[0] ** 2 + lam * state.q[0] ** 2)
    for _ in range(40):
        z = E @ z
        state = step_modal(basis, state, [g], dt)
        assert state.q[0] == pytest.approx(z[0], rel=1e-9, abs=1e-12)
        assert state.q_dot[0] == pytest.approx(z[1], rel=1e-9, abs=1e-12)
    # unforced run dissipates energy monotonically
    state = ModalState([0.3], [-1.2])
    for _ in range(200):
        state = step_modal(basis, state, [0.0], dt)
        e_new = 0.5 * (state.q_dot[0] ** 2 + lam * state.q[0] ** 2)
        assert e_new <= energy * (1 + 1e-12)
        energy = e_new


def test_step_rejects_bad_dt(tongue_basis):
    with pytest.raises(ValueError):
        step_modal(tongue_basis, ModalState.zeros(30), np.zeros(30), 0.0)


def test_reduced_matches_dense_small_mesh(small_block, rng):
    system = assemble(small_block)
    assert system.n_free <= 300
    basis = solve_modes(system, system.n_free)
    u0 = 1e-3 * rng.normal(size=system.n_free)
    v0 = 1e-2 * rng.normal(size=system.n_free)
    f = 1e-3 * rng.normal(size=system.n_free)
    dt, steps = 2e-3, 100
    ref = dense_trajectory(system, u0, v0, f, dt, steps)
    Mphi = system.mass_diag[:, None] * basis.phi
    state = ModalState(Mphi.T @ u0, Mphi.T @ v0)
    g = modal_force(basis, f)
    worst = 0.0
    for k in range(steps):
        state = step_modal(basis, state, g, dt)
        u = basis.phi @ state.q
        worst = max(worst, np.linalg.norm(u - ref[k]) / np.linalg.norm(ref[k]))
    assert worst <= 1e-6


def test_truncation_error_non_increasing(tongue, tongue_system):
    basis = solve_modes(tongue_system, 60)
    # smooth load: uniform body force along -y
    f = -tongue_system.mass_diag * np.tile([0.0, 1.0, 0.0], tongue.n_nodes)[tongue_system.free_dofs]
    u_full = scipy.sparse.linalg.spsolve(tongue_system.stiffness.tocsc(), f)
    errs = []
    for r in range(1, 61):
        phi = basis.phi[:, :r]
        u_r = phi @ (phi.T @ f / basis.eigenvalues[:r])
        d = u_full - u_r
        errs.append(math.sqrt(d @ (tongue_system.mass_diag * d)))
    assert all(b <= a * (1 + 1e-12) for a, b in zip(errs, errs[1:]))


def test_constrained_pose_zero(tongue, tongue_basis):
    cons = [(int(c), (0.0, 0.0)) for c in tongue.constraint_nodes]
    state = solve_constrained_pose(tongue_basis, cons)
    assert np.array_equal(state.q, np.zeros(30))
    assert np.array_equal(state.q_dot, np.zeros(30))


def test_constrained_pose_exact_interpolation(tongue, tongue_basis, rng):
    basis = tongue_basis.truncated(2 * len(tongue.constraint_nodes))
    targets = 1e-3 * rng.uniform(-1, 1, size=(4, 2))
    cons = list(zip(tongue.constraint_nodes.tolist(), targets))
    state = solve_constrained_pose(basis, cons, eps=0.0)
    u = reconstruct(basis, state)
    got = u[tongue.constraint_nodes, :2]
    assert np.linalg.norm(got - targets) <= 1e-9


def test_regularisation_monotone(tongue, tongue_basis, rng):
    targets = 5e-3 * rng.uniform(-1, 1, size=(4, 2))
    cons = list(zip(tongue.constraint_nodes.tolist(), targets))
    prev = -1.0
    for eps in [1e-8 * 2**k for k in range(30)]:
        u = reconstruct(tongue_basis, solve_constrained_pose(tongue_basis, cons, eps))
        resid = np.linalg.norm(u[tongue.constraint_nodes, :2] - targets)
        assert resid >= prev * (1 - 1e-9)
        prev = resid


def test_constrained_pose_errors(tongue, tongue_basis):
    cons = [(int(c), (1e-3, 0.0)) for c in tongue.constraint_nodes]
    with pytest.raises(ModalError, match="eps > 0"):
        solve_constrained_pose(tongue_basis, cons, eps=0.0)
    with pytest.raises(ModalError, match="anchored"):
        solve_constrained_pose(tongue_basis, [(int(tongue.anchor_nodes[0]), (0.0, 0.0))])


def test_reconstruct_zero(tongue_basis):
    for warp in (False, True):
        assert np.array_equal(reconstruct(tongue_basis, np.zeros(30), warp), np.zeros((tongue_basis.n_nodes, 3)))


def test_reconstruct_dense_oracle(tongue, tongue_basis, rng):
    q = rng.normal(size=30)
    u = reconstruct(tongue_basis, ModalState(q))
    full = tongue_basis.full_modes()
    expected = np.array([sum(full[d, j] * q[j] for j in range(30)) for d in range(full.shape[0])])
    assert np.allclose(u.ravel(), expected, rtol=1e-12, atol=1e-14 * np.abs(expected).max())
    assert np.array_equal(u[tongue.anchor_nodes], np.zeros((len(tongue.anchor_nodes), 3)))


def test_warp_needs_curl(tongue_system):
    basis = solve_modes(tongue_system, 3)
    with pytest.raises(ModalError, match="curl"):
        reconstruct(basis, np.ones(3), warp=True)


def test_warp_rotates_rigidly(tongue_basis, rng):
    q = 0.05 * rng.normal(size=30)
    lin = reconstruct(tongue_basis, q)
    warped = reconstruct(tongue_basis, q, warp=True)
    # each node's contribution is rotated, so its length is preserved
    assert np.allclose(np.linalg.norm(warped, axis=1), np.linalg.norm(lin, axis=1), rtol=1e-12, atol=1e-18)


def test_curl_basis_of_rotation_field(small_block):
    # a field u = w x x has half-curl w everywhere
    from modalpose.modal import curl_basis

    w = np.array([0.1, -0.2, 0.3])
    u = np.cross(w, small_block.nodes).ravel()
    fake = ModalBasis(u[:, None], np.array([1.0]), 0.0, 0.0, np.ones(len(u)), np.arange(len(u)))
    curl = curl_basis(small_block, fake)
    assert np.allclose(curl[:, :, 0].T, w, atol=1e-12)


def test_basis_roundtrip_bit_exact(tmp_path, tongue_system, tongue_basis):
    p = tmp_path / "basis.bin"
    save_basis(tongue_basis, p)
    again = load_basis(p)
    assert np.array_equal(again.phi, tongue_basis.phi)
    assert np.array_equal(again.eigenvalues, tongue_basis.eigenvalues)
    assert np.array_equal(again.curl_basis, tongue_basis.curl_basis)
    assert np.array_equal(again.free_dof_map, tongue_basis.free_dof_map)
    assert (again.xi, again.zeta) == (tongue_basis.xi, tongue_basis.zeta)
    assert again.fingerprint() == tongue_basis.fingerprint()
    assert orthogonality_report(again, tongue_system) == orthogonality_report(tongue_basis, tongue_system)


def test_basis_truncated_file(tmp_path, tongue_basis):
    data = tongue_basis.to_bytes()
    with pytest.raises(ModalError):
        ModalBasis.from_bytes(data[:-8])
    with pytest.raises(ModalError):
        ModalBasis.from_bytes(b"garbage!" + data[8:])


@pytest.mark.parametrize("c", [4.0 - 1e-9, 4.0 + 1e-9, 4.0 + 1e-3])
def test_near_critical_damping_is_continuous(c):
    crit = single_mode(4.0, 4.0)
    near = single_mode(4.0, c)
    s0 = ModalState([0.4], [1.0])
    a = step_modal(crit, s0, [0.0], 0.3)
    b = step_modal(near, s0, [0.0], 0.3)
    assert b.q[0] == pytest.approx(a.q[0], rel=1e-3 if c > 4.0001 else 1e-7)
