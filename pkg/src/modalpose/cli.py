"""``modalpose`` command line: modes, db generate, track, validate, bench."""

from __future__ import annotations

import argparse
import json
import logging
import statistics
import sys
import time
from pathlib import Path

import numpy as np

from . import contour as ct
from .config import ConfigError, load_config
from .fem import FemError, assemble
from .fixtures import write_fixture
from .mesh import MeshError, export_surface_frame, load_mesh, midsagittal_path
from .modal import ModalError, load_basis, orthogonality_report, reconstruct, save_basis, solve_modes
from .retrieval import (
    RetrievalError,
    ScoringIndex,
    best_match,
    id_jumps,
    read_results,
    track_sequence,
    validate_overlay,
    write_results,
)
from .shape_db import (
    DatabaseError,
    generate_database,
    load_database,
    save_database,
    verify_records,
)

log = logging.getLogger("modalpose")

ORTHO_TOL = 1e-8
FRAME_BUDGET_SECONDS = 1.2

BASIS_FILE = "basis.bin"
DB_FILE = "shapes.db"
RESULTS_FILE = "results.csv"
OVERLAY_FILE = "overlay.csv"


class UsageError(Exception):
    pass


def _common(p):
    p.add_argument("--config", help="key = value config file (default: $MODALPOSE_CONFIG)")
    p.add_argument("--mesh", type=Path, help="tetmesh v1 file")
    p.add_argument("--modes", type=int, help="number of retained modes r")
    p.add_argument("--samples", type=int, help="database size N")
    p.add_argument("--max-disp", type=float, help="per-component constraint displacement bound")
    p.add_argument("--seed", type=int)
    p.add_argument("--alpha", type=float, help="weight of 1/MSD in the objective")
    p.add_argument("--beta", type=float, help="weight of 1/penalty in the objective")
    p.add_argument("--resample-n", type=int, help="points per compared contour")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--jobs", type=int, help="worker cap for database generation")
    p.add_argument("--basis", type=Path, help=f"basis artifact (default: OUT/{BASIS_FILE})")
    p.add_argument("--db", type=Path, help=f"database file (default: OUT/{DB_FILE})")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="modalpose", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fixture", help="write the synthetic tongue mesh and config")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("modes", help="solve and persist the truncated modal basis")
    _common(p)

    p = sub.add_parser("db", help="shape database commands")
    dbsub = p.add_subparsers(dest="db_command", required=True)
    _common(dbsub.add_parser("generate", help="generate the shape database"))

    p = sub.add_parser("track", help="match every contour frame against the database")
    _common(p)
    p.add_argument("frames", type=Path, help="directory of frame_%%06d.csv files")
    p.add_argument("--no-obj", action="store_true", help="skip per-frame OBJ export")

    p = sub.add_parser("validate", help="overlay report for tracking results")
    _common(p)
    p.add_argument("frames", type=Path)
    p.add_argument("--results", type=Path, help=f"default: OUT/{RESULTS_FILE}")

    p = sub.add_parser("bench", help="time eigensolve, database generation and scoring")
    _common(p)
    p.add_argument("--frames", type=int, default=50, help="scoring repetitions")
    p.add_argument("--bench-samples", type=int, default=100, help="draws timed for generation")
    return parser


def resolve_config(args):
    cfg = load_config(args.config)
    cfg = cfg.updated(
        mesh=args.mesh, modes=args.modes, samples=args.samples, max_disp=args.max_disp,
        seed=args.seed, alpha=args.alpha, beta=args.beta, resample_n=args.resample_n,
        out=args.out, jobs=args.jobs,
    )
    return cfg.validate()


def load_model(cfg):
    if cfg.mesh is None:
        raise UsageError("no mesh given (use --mesh or a config file with 'mesh = ...')")
    if not Path(cfg.mesh).is_file():
        raise UsageError(f"mesh file {cfg.mesh} not found")
    return load_mesh(cfg.mesh, cfg.anchors, cfg.constraints)


def _basis_path(args, cfg):
    return args.basis or Path(cfg.out) / BASIS_FILE


def _db_path(args, cfg):
    return args.db or Path(cfg.out) / DB_FILE


def _require(path, what, hint):
    if not Path(path).is_file():
        raise UsageError(f"{what} {path} not found; run '{hint}' first")


def cmd_modes(args, cfg):
    mesh = load_model(cfg)
    t0 = time.perf_counter()
    system = assemble(mesh, cfg.material, cfg.xi, cfg.zeta)
    basis = solve_modes(system, cfg.modes, mesh=mesh)
    elapsed = time.perf_counter() - t0
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    path = _basis_path(args, cfg)
    save_basis(basis, path)
    report = orthogonality_report(basis, system)
    report["fingerprint"] = basis.fingerprint()
    report["ok"] = bool(
        report["mass_orthonormality_max"] <= ORTHO_TOL and report["stiffness_offdiag_rel"] <= ORTHO_TOL
    )
    (out / "modes_report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(f"wrote {path} (r={basis.n_modes}, free DOFs={basis.n_free}) in {elapsed:.2f} s")
    print(f"|Phi^T M Phi - I|_max = {report['mass_orthonormality_max']:.3e}")
    print(f"|offdiag Phi^T K Phi|/lambda_max = {report['stiffness_offdiag_rel']:.3e}")
    return 0 if report["ok"] else 1


def _model_and_basis(args, cfg):
    mesh = load_model(cfg)
    bpath = _basis_path(args, cfg)
    _require(bpath, "basis", "modalpose modes")
    basis = load_basis(bpath)
    if basis.n_nodes != mesh.n_nodes:
        raise UsageError(f"basis {bpath} was built for a different mesh")
    return mesh, basis, midsagittal_path(mesh, cfg.plane_tolerance)


def cmd_db(args, cfg):
    mesh, basis, path = _model_and_basis(args, cfg)
    t0 = time.perf_counter()
    db = generate_database(
        mesh, basis, path, cfg.samples, cfg.max_disp, cfg.seed, eps=cfg.eps, warp=cfg.warp,
        filter_cfg=cfg.filter, jobs=cfg.jobs,
    )
    elapsed = time.perf_counter() - t0
    dest = _db_path(args, cfg)
    dest.parent.mkdir(parents=True, exist_ok=True)
    save_database(db, dest)
    reloaded = load_database(dest, basis)
    failures = verify_records(reloaded, mesh, basis, path)
    print(f"wrote {dest}: {len(db)} records, max_disp={db.gen_config.max_disp:.6g}, {elapsed:.2f} s")
    for rid, reason in failures[:10]:
        print(f"record {rid} fails on reload: {reason}", file=sys.stderr)
    return 1 if failures else 0


def _load_frames(frames_dir, cfg):
    files = ct.list_frames(frames_dir)
    if not files:
        raise UsageError(f"no frame_NNNNNN.csv files in {frames_dir}")
    return files, [lambda f=f: ct.read_contour_csv(f, cfg.affine) for f in files]


def cmd_track(args, cfg):
    mesh, basis, _ = _model_and_basis(args, cfg)
    dbpath = _db_path(args, cfg)
    _require(dbpath, "database", "modalpose db generate")
    db = load_database(dbpath, basis)
    files, loaders = _load_frames(args.frames, cfg)
    results = track_sequence(loaders, db, cfg.scoring)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_results(out / RESULTS_FILE, results)
    if not args.no_obj:
        objdir = out / "frames"
        objdir.mkdir(exist_ok=True)
        for res, f in zip(results, files):
            u = reconstruct(basis, db.records[res.record_id].q, warp=db.gen_config.warp)
            export_surface_frame(mesh, u, objdir / (f.stem + ".obj"))
    times = [r.elapsed for r in results]
    print(f"tracked {len(results)} frames -> {out / RESULTS_FILE}")
    print(f"per-frame association: mean {1e3 * statistics.fmean(times):.3f} ms, "
          f"max {1e3 * max(times):.3f} ms (bound {FRAME_BUDGET_SECONDS} s)")
    print(f"record id changes between frames: {id_jumps(results)}")
    return 0 if max(times) <= FRAME_BUDGET_SECONDS else 1


def _fmt_points(pts):
    return ";".join(f"{x!r} {y!r}" for x, y in pts.tolist())


def cmd_validate(args, cfg):
    dbpath = _db_path(args, cfg)
    _require(dbpath, "database", "modalpose db generate")
    basis = load_basis(_basis_path(args, cfg)) if _basis_path(args, cfg).is_file() else None
    db = load_database(dbpath, basis)
    rpath = args.results or Path(cfg.out) / RESULTS_FILE
    _require(rpath, "results", "modalpose track")
    results = read_results(rpath)
    files, loaders = _load_frames(args.frames, cfg)
    problems = []
    if len(results) != len(files):
        problems.append(f"{len(results)} result rows for {len(files)} frames")
    rows = ["frame,record_id,msd,score_stored,score_recomputed,target,selected"]
    scoring = cfg.scoring
    index = ScoringIndex.build(db, scoring)
    for res, load in zip(results, loaders):
        target = load()
        entry = validate_overlay(res, db, target, scoring)
        rescored = ct.score_from_parts(
            entry["msd"], index.penalties[res.record_id], scoring
        )
        if not np.isclose(rescored, res.score_l, rtol=1e-12, atol=0):
            problems.append(f"frame {res.frame_index}: stored score {res.score_l!r} != {rescored!r}")
        best = best_match(target, db, scoring, index=index)
        if best.record_id != res.record_id:
            problems.append(f"frame {res.frame_index}: best record is {best.record_id}, not {res.record_id}")
        rows.append(
            f"{res.frame_index},{res.record_id},{entry['msd']!r},{res.score_l!r},{float(rescored)!r},"
            f"{_fmt_points(entry['target'])},{_fmt_points(entry['selected'])}"
        )
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / OVERLAY_FILE).write_text("\n".join(rows) + "\n")
    print(f"wrote {out / OVERLAY_FILE} ({len(rows) - 1} rows)")
    for p in problems:
        print(p, file=sys.stderr)
    return 1 if problems else 0


def _stats(samples):
    return {
        "mean_ms": 1e3 * statistics.fmean(samples),
        "min_ms": 1e3 * min(samples),
        "max_ms": 1e3 * max(samples),
        "n": len(samples),
    }


def cmd_bench(args, cfg):
    mesh = load_model(cfg)
    rows = {}
    t0 = time.perf_counter()
    system = assemble(mesh, cfg.material, cfg.xi, cfg.zeta)
    rows["assemble"] = _stats([time.perf_counter() - t0])
    t0 = time.perf_counter()
    basis = solve_modes(system, cfg.modes, mesh=mesh)
    rows["eigensolve"] = _stats([time.perf_counter() - t0])
    path = midsagittal_path(mesh, cfg.plane_tolerance)

    dbpath = _db_path(args, cfg)
    if dbpath.is_file():
        db = load_database(dbpath)
    else:
        db = None
    n_bench = max(1, args.bench_samples)
    t0 = time.perf_counter()
    small = generate_database(mesh, basis, path, n_bench, cfg.max_disp, cfg.seed, eps=cfg.eps,
                              warp=cfg.warp, filter_cfg=cfg.filter)
    per = (time.perf_counter() - t0) / n_bench
    rows["db_gen_per_sample"] = _stats([per])
    if db is None:
        db = small
    if len(db) == 0:
        raise UsageError("database is empty")

    scoring = cfg.scoring
    index = ScoringIndex.build(db, scoring)
    rng = np.random.default_rng(cfg.seed)
    times = []
    for _ in range(max(1, args.frames)):
        rec = db.records[int(rng.integers(len(db)))]
        t0 = time.perf_counter()
        best_match(rec.projected_contour, db, scoring, index=index)
        times.append(time.perf_counter() - t0)
    rows[f"score_per_frame_{len(db)}_records"] = _stats(times)

    print(f"{'stage':<32}{'mean ms':>12}{'min ms':>12}{'max ms':>12}{'n':>6}")
    for name, s in rows.items():
        print(f"{name:<32}{s['mean_ms']:>12.3f}{s['min_ms']:>12.3f}{s['max_ms']:>12.3f}{s['n']:>6}")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "bench.json").write_text(json.dumps(rows, indent=2) + "\n")
    return 0 if max(times) <= FRAME_BUDGET_SECONDS else 1


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "fixture":
            cfg_path = write_fixture(args.out)
            print(f"wrote {cfg_path}")
            return 0
        cfg = resolve_config(args)
        handler = {
            "modes": cmd_modes,
            "db": cmd_db,
            "track": cmd_track,
            "validate": cmd_validate,
            "bench": cmd_bench,
        }[args.command]
        return handler(args, cfg)
    except UsageError as exc:
        parser.error(str(exc))
    except (ConfigError, MeshError, FemError, ModalError, DatabaseError, RetrievalError,
            ct.ContourError, OSError) as exc:
        print(f"modalpose: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
