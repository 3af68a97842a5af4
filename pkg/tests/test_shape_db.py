import time

import numpy as np
import pytest

from modalpose.contour import Contour2D
from modalpose.modal import reconstruct, solve_constrained_pose
from modalpose.shape_db import (
    DatabaseError,
    FilterConfig,
    _evaluate,
    default_max_disp,
    generate_database,
    load_database,
    plausibility_filter,
    project_contour,
    sample_displacements,
    save_database,
    verify_records,
)


def rest_contour(mesh, path):
    return project_contour(mesh, path, np.zeros((mesh.n_nodes, 3)))


def test_sample_zero_bound():
    assert np.array_equal(sample_displacements(1, 4, 0.0), np.zeros((4, 2)))


def test_sample_range_and_determinism():
    draws = np.concatenate([sample_displacements(7, 4, 0.5, i) for i in range(12500)])
    assert draws.size == 10**5
    assert draws.max() <= 0.5 and draws.min() >= -0.5
    assert draws.max() > 0.49 and draws.min() < -0.49
    again = np.concatenate([sample_displacements(7, 4, 0.5, i) for i in range(12500)])
    assert np.array_equal(draws, again)
    assert not np.array_equal(sample_displacements(7, 4, 0.5, 0), sample_displacements(8, 4, 0.5, 0))


def test_rest_shape_accepted(tongue, tongue_path):
    rest = rest_contour(tongue, tongue_path)
    assert plausibility_filter(tongue, np.zeros((tongue.n_nodes, 3)), rest, rest) is True


def test_inverted_element_rejected(tongue, tongue_path):
    t = tongue.tets[100]
    a = t[0]
    face_centroid = tongue.nodes[t[1:]].mean(axis=0)
    disp = np.zeros((tongue.n_nodes, 3))
    # push node a through the opposite face
    disp[a] = 2.0 * (face_centroid - tongue.nodes[a])
    rest = rest_contour(tongue, tongue_path)
    verdict = plausibility_filter(tongue, disp, rest, rest)
    assert not verdict and verdict.reason.startswith("inverted element")


def test_self_intersecting_contour_rejected(tongue):
    loop = Contour2D([[0, 0], [2, 0], [2, 1], [1, -1]])
    verdict = plausibility_filter(tongue, np.zeros((tongue.n_nodes, 3)), loop)
    assert not verdict and verdict.reason == "self-intersection"


def test_backtracking_contour_rejected(tongue):
    rest = Contour2D([[0, 0], [1, 0], [2, 0], [3, 0]])
    zigzag = Contour2D([[0, 0], [1.5, 0], [1.2, 0.5], [3, 0.6]])
    zero = np.zeros((tongue.n_nodes, 3))
    verdict = plausibility_filter(tongue, zero, zigzag, rest)
    assert not verdict and verdict.reason.startswith("backtrack at segment 1")
    # 0.3 of a unit rest segment is tolerated with backtrack_tol = 0.5
    assert plausibility_filter(tongue, zero, zigzag, rest, FilterConfig(backtrack_tol=0.5))


def test_project_contour(tongue, tongue_path):
    rest = rest_contour(tongue, tongue_path)
    assert np.array_equal(rest.points, tongue.nodes[list(tongue_path.node_ids), :2])
    shift = np.tile([1.0, 0.0, 0.0], (tongue.n_nodes, 1))
    moved = project_contour(tongue, tongue_path, shift)
    assert np.array_equal(moved.points[:, 0], rest.points[:, 0] + 1.0)
    assert np.array_equal(moved.points[:, 1], rest.points[:, 1])


def test_record_contour_matches_dense_recomputation(tongue, tongue_basis, tongue_path, small_db):
    rec = small_db.records[11]
    full = tongue_basis.full_modes()
    expected = []
    for node in tongue_path.node_ids:
        pos = []
        for ax in range(2):
            row = full[3 * node + ax]
            pos.append(tongue.nodes[node, ax] + sum(row[j] * rec.q[j] for j in range(len(rec.q))))
        expected.append(pos)
    assert np.allclose(rec.projected_contour.points, expected, rtol=0, atol=1e-12)


def test_single_rest_record(tongue, tongue_basis, tongue_path):
    db = generate_database(tongue, tongue_basis, tongue_path, 1, max_disp=0.0)
    assert len(db) == 1
    rec = db.records[0]
    assert np.array_equal(rec.q, np.zeros(30))
    assert rec.projected_contour == rest_contour(tongue, tongue_path)


def test_records_satisfy_invariants(tongue, tongue_basis, tongue_path, small_db):
    assert [r.id for r in small_db.records] == list(range(200))
    m = len(tongue.constraint_nodes)
    for rec in small_db.records:
        assert rec.constraint_disp.shape == (m, 2)
        assert np.abs(rec.constraint_disp).max() <= small_db.gen_config.max_disp
        assert len(rec.projected_contour) == len(tongue_path)
        assert np.all(np.isfinite(rec.q))
    assert verify_records(small_db, tongue, tongue_basis, tongue_path) == []
    assert small_db.basis_fingerprint == tongue_basis.fingerprint()


def test_default_max_disp(tongue, tongue_path, small_db):
    assert small_db.gen_config.max_disp == default_max_disp(tongue, tongue_path)
    assert small_db.gen_config.max_disp == pytest.approx(0.15 * rest_contour(tongue, tongue_path).arc_length)


def test_acceptance_is_pure_function_of_draw(tongue, tongue_basis, tongue_path, small_db):
    cfg = small_db.gen_config
    rest = rest_contour(tongue, tongue_path)
    accepted = []
    for i in range(40):
        *_, verdict = _evaluate(tongue, tongue_basis, tongue_path, rest, cfg, i)
        if verdict:
            accepted.append(sample_displacements(cfg.seed, 4, cfg.max_disp, i))
    for rec, disp in zip(small_db.records, accepted):
        assert np.array_equal(rec.constraint_disp, disp)


def test_record_q_is_the_constrained_pose(tongue, tongue_basis, small_db):
    rec = small_db.records[0]
    cons = list(zip(tongue.constraint_nodes.tolist(), rec.constraint_disp))
    assert np.array_equal(solve_constrained_pose(tongue_basis, cons).q, rec.q)
    u = reconstruct(tongue_basis, rec.q)
    assert np.array_equal(rec.constraint_points, tongue.nodes[tongue.constraint_nodes, :2] + u[tongue.constraint_nodes, :2])


def test_roundtrip(tmp_path, tongue_basis, small_db):
    p = tmp_path / "db.txt"
    save_database(small_db, p)
    again = load_database(p, tongue_basis)
    assert again == small_db
    save_database(again, tmp_path / "db2.txt")
    assert (tmp_path / "db2.txt").read_bytes() == p.read_bytes()


def test_seed_reproducible_and_parallel_identical(tmp_path, tongue, tongue_basis, tongue_path):
    a = generate_database(tongue, tongue_basis, tongue_path, 30, seed=9)
    b = generate_database(tongue, tongue_basis, tongue_path, 30, seed=9, jobs=2, batch=7)
    save_database(a, tmp_path / "a")
    save_database(b, tmp_path / "b")
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()
    c = generate_database(tongue, tongue_basis, tongue_path, 30, seed=10)
    assert c != a


def test_truncated_file(tmp_path, small_db):
    p = tmp_path / "db.txt"
    save_database(small_db, p)
    lines = p.read_text().splitlines()
    p.write_text("\n".join(lines[:-3]) + "\n")
    with pytest.raises(DatabaseError, match="truncated"):
        load_database(p)


def test_malformed_record(tmp_path, small_db):
    p = tmp_path / "db.txt"
    save_database(small_db, p)
    text = p.read_text().replace("\nq ", "\nqq ", 1)
    p.write_text(text)
    with pytest.raises(DatabaseError, match="malformed record"):
        load_database(p)


def test_record_over_threshold_rejected(tmp_path, small_db):
    p = tmp_path / "db.txt"
    save_database(small_db, p)
    lines = p.read_text().splitlines()
    i = next(k for k, ln in enumerate(lines) if ln.startswith("disp "))
    lines[i] = "disp " + " ".join(["1.0"] * 8)
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(DatabaseError, match="max_disp"):
        load_database(p)


def test_fingerprint_mismatch(tmp_path, tongue_basis, small_db):
    p = tmp_path / "db.txt"
    save_database(small_db, p)
    with pytest.raises(DatabaseError, match="different modal basis"):
        load_database(p, tongue_basis.truncated(10))


def test_low_acceptance_fails(tongue, tongue_basis, tongue_path):
    with pytest.raises(DatabaseError, match="smaller max_disp"):
        generate_database(tongue, tongue_basis, tongue_path, 5, max_disp=1.0)


def test_full_database_loads_fast(tmp_path, tongue_basis, full_db):
    p = tmp_path / "full.db"
    save_database(full_db, p)
    t0 = time.perf_counter()
    db = load_database(p, tongue_basis)
    assert time.perf_counter() - t0 < 1.0
    assert len(db) == 1000
