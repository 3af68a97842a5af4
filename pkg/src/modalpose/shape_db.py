"""Database of constraint-posed shapes and their midsagittal contours."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .contour import Contour2D, ContourError, self_intersects
from .mesh import signed_volumes
from .modal import reconstruct, solve_constrained_pose

logger = logging.getLogger(__name__)

DB_HEADER = "modalpose-db v1"


class DatabaseError(ValueError):
    pass


@dataclass(frozen=True)
class FilterConfig:
    """Plausibility rules; ``backtrack_tol`` is a fraction of each rest segment length."""

    backtrack_tol: float = 0.0
    check_volumes: bool = True
    check_intersections: bool = True


@dataclass(frozen=True)
class GenConfig:
    samples: int
    max_disp: float
    seed: int
    eps: float = 1e-6
    warp: bool = False
    filter: FilterConfig = FilterConfig()


@dataclass(frozen=True, eq=False)
class ShapeRecord:
    """One database shape.

    ``constraint_points`` are the posed (x, y) positions of the constraint
    nodes, which the spacing penalty is computed from.
    """

    id: int
    constraint_disp: np.ndarray
    q: np.ndarray
    projected_contour: Contour2D
    constraint_points: np.ndarray

    def __eq__(self, other):
        return (
            isinstance(other, ShapeRecord)
            and self.id == other.id
            and np.array_equal(self.constraint_disp, other.constraint_disp)
            and np.array_equal(self.q, other.q)
            and self.projected_contour == other.projected_contour
            and np.array_equal(self.constraint_points, other.constraint_points)
        )


@dataclass(eq=False)
class ShapeDatabase:
    records: list
    gen_config: GenConfig
    basis_fingerprint: str
    _index_cache: dict = field(default_factory=dict, repr=False)

    def __len__(self):
        return len(self.records)

    def __eq__(self, other):
        return (
            isinstance(other, ShapeDatabase)
            and self.gen_config == other.gen_config
            and self.basis_fingerprint == other.basis_fingerprint
            and self.records == other.records
        )


@dataclass(frozen=True)
class Rejection:
    reason: str

    def __bool__(self):
        return False


ACCEPT = True


def sample_displacements(rng_seed: int, m: int, max_disp: float, draw_index: int = 0) -> np.ndarray:
    """(m, 2) in-plane displacements drawn uniformly from [-max_disp, max_disp].

    Each draw has its own generator keyed by ``(seed, draw_index)``, so a
    draw is reproducible regardless of how many came before it.
    """
    if max_disp < 0:
        raise ValueError("max_disp must be non-negative")
    if max_disp == 0:
        return np.zeros((m, 2))
    rng = np.random.default_rng([int(rng_seed), int(draw_index)])
    return rng.uniform(-max_disp, max_disp, size=(m, 2))


def project_contour(mesh, path, displacements) -> Contour2D:
    """(x, y) of the path nodes after displacement; z is dropped."""
    ids = np.asarray(path.node_ids if hasattr(path, "node_ids") else path, dtype=np.int64)
    pos = mesh.nodes[ids, :2] + np.asarray(displacements)[ids, :2]
    return Contour2D(pos)


def _backtracks(contour, rest, tol):
    d = np.diff(contour, axis=0)
    r = np.diff(rest, axis=0)
    rest_len = np.linalg.norm(r, axis=1)
    advance = np.einsum("ij,ij->i", d, r) / rest_len
    return advance < -tol * rest_len


def plausibility_filter(mesh, displacements, contour, rest_contour=None, cfg: FilterConfig = FilterConfig()):
    """Return ``True`` for a plausible shape, else a falsy ``Rejection`` with the reason.

    A shape is rejected when a deformed tet has non-positive volume, when the
    contour crosses itself, or when a contour segment runs backwards along its
    rest direction by more than ``backtrack_tol`` of its rest length.
    """
    disp = np.asarray(displacements, dtype=np.float64)
    pts = contour.points if isinstance(contour, Contour2D) else np.asarray(contour)
    if cfg.check_volumes:
        vols = signed_volumes(mesh.nodes + disp, mesh.tets)
        if np.any(vols <= 0):
            return Rejection(f"inverted element {int(np.argmax(vols <= 0))}")
    if cfg.check_intersections and self_intersects(pts):
        return Rejection("self-intersection")
    if rest_contour is not None:
        rest = rest_contour.points if isinstance(rest_contour, Contour2D) else np.asarray(rest_contour)
        back = _backtracks(pts, rest, cfg.backtrack_tol)
        if np.any(back):
            return Rejection(f"backtrack at segment {int(np.argmax(back))}")
    return ACCEPT


def default_max_disp(mesh, path, fraction=0.15):
    """Fraction of the rest midsagittal contour's arc length."""
    rest = mesh.nodes[np.asarray(path.node_ids), :2]
    return fraction * float(np.linalg.norm(np.diff(rest, axis=0), axis=1).sum())


def _evaluate(mesh, basis, path, rest, cfg, draw_index):
    m = len(mesh.constraint_nodes)
    disp = sample_displacements(cfg.seed, m, cfg.max_disp, draw_index)
    state = solve_constrained_pose(basis, list(zip(mesh.constraint_nodes.tolist(), disp)), cfg.eps)
    u = reconstruct(basis, state, warp=cfg.warp)
    try:
        contour = project_contour(mesh, path, u)
    except ContourError as exc:
        return disp, state.q, None, None, Rejection(f"degenerate contour: {exc}")
    verdict = plausibility_filter(mesh, u, contour, rest, cfg.filter)
    cpts = mesh.nodes[mesh.constraint_nodes, :2] + u[mesh.constraint_nodes, :2]
    return disp, state.q, contour, cpts, verdict


def generate_database(mesh, basis, path, N, max_disp=None, seed=0, *, eps=1e-6, warp=False,
                      filter_cfg=FilterConfig(), jobs=1, batch=256) -> ShapeDatabase:
    """Draw random constraint displacements until ``N`` plausible shapes are accepted.

    Draws are evaluated in batches (in parallel when ``jobs > 1``) and
    committed in draw order, so the result depends only on the inputs and
    the seed. Fails if fewer than 1% of draws are accepted once 10*N draws
    have been made, or if 100*N draws do not suffice.
    """
    if N < 1:
        raise DatabaseError("N must be at least 1")
    if max_disp is None:
        max_disp = default_max_disp(mesh, path)
    cfg = GenConfig(int(N), float(max_disp), int(seed), float(eps), bool(warp), filter_cfg)
    rest = project_contour(mesh, path, np.zeros((mesh.n_nodes, 3)))
    if jobs != 1:
        from joblib import Parallel, delayed

        pool = Parallel(n_jobs=jobs)
    records, reasons = [], {}
    draws = 0
    budget = 100 * N
    while len(records) < N:
        if draws >= 10 * N and len(records) < 0.01 * draws:
            raise DatabaseError(
                f"acceptance rate {len(records)}/{draws} below 1%; try a smaller max_disp"
            )
        if draws >= budget:
            raise DatabaseError(f"only {len(records)} of {N} shapes accepted after {draws} draws")
        idx = range(draws, min(draws + batch, budget))
        if jobs != 1:
            results = pool(delayed(_evaluate)(mesh, basis, path, rest, cfg, i) for i in idx)
        else:
            results = [_evaluate(mesh, basis, path, rest, cfg, i) for i in idx]
        for disp, q, contour, cpts, verdict in results:
            draws += 1
            if verdict:
                records.append(ShapeRecord(len(records), disp, q, contour, cpts))
                if len(records) == N:
                    break
            else:
                key = verdict.reason.split(" ")[0]
                reasons[key] = reasons.get(key, 0) + 1
    logger.info("accepted %d of %d draws; rejections: %s", len(records), draws, reasons or "none")
    return ShapeDatabase(records, cfg, basis.fingerprint())


# -- persistence ----------------------------------------------------------

def _fmt(values):
    return " ".join(repr(float(v)) for v in np.ravel(values))


def database_text(db: ShapeDatabase) -> str:
    cfg = db.gen_config
    rec0 = db.records[0] if db.records else None
    lines = [
        DB_HEADER,
        f"samples = {cfg.samples}",
        f"max_disp = {cfg.max_disp!r}",
        f"seed = {cfg.seed}",
        f"eps = {cfg.eps!r}",
        f"warp = {int(cfg.warp)}",
        f"backtrack_tol = {cfg.filter.backtrack_tol!r}",
        f"check_volumes = {int(cfg.filter.check_volumes)}",
        f"check_intersections = {int(cfg.filter.check_intersections)}",
        f"basis_fingerprint = {db.basis_fingerprint}",
        f"records = {len(db.records)}",
        f"m = {len(rec0.constraint_disp) if rec0 else 0}",
        f"r = {len(rec0.q) if rec0 else 0}",
        f"path_len = {len(rec0.projected_contour) if rec0 else 0}",
    ]
    for rec in db.records:
        lines += [
            f"record {rec.id}",
            f"disp {_fmt(rec.constraint_disp)}",
            f"q {_fmt(rec.q)}",
            f"contour {_fmt(rec.projected_contour.points)}",
            f"cpoints {_fmt(rec.constraint_points)}",
        ]
    return "\n".join(lines) + "\n"


def save_database(db: ShapeDatabase, path):
    Path(path).write_text(database_text(db))


def _check_record(rec, cfg, m, r, k):
    if rec.constraint_disp.shape != (m, 2) or len(rec.q) != r or len(rec.projected_contour) != k:
        raise DatabaseError(f"record {rec.id}: field sizes do not match the header")
    if np.any(np.abs(rec.constraint_disp) > cfg.max_disp):
        raise DatabaseError(f"record {rec.id}: displacement exceeds max_disp")
    if not np.all(np.isfinite(rec.q)):
        raise DatabaseError(f"record {rec.id}: non-finite modal coordinates")


def load_database(path, basis=None) -> ShapeDatabase:
    """Parse a database file, checking every record and, if given, the basis fingerprint."""
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0] != DB_HEADER:
        raise DatabaseError(f"{path}: not a {DB_HEADER!r} file")
    head = {}
    pos = 1
    while pos < len(lines) and not lines[pos].startswith("record "):
        key, sep, value = lines[pos].partition("=")
        if not sep:
            raise DatabaseError(f"{path}: line {pos + 1}: expected 'key = value'")
        head[key.strip()] = value.strip()
        pos += 1
    try:
        cfg = GenConfig(
            int(head["samples"]), float(head["max_disp"]), int(head["seed"]), float(head["eps"]),
            bool(int(head["warp"])),
            FilterConfig(float(head["backtrack_tol"]), bool(int(head["check_volumes"])),
                         bool(int(head["check_intersections"]))),
        )
        fingerprint = head["basis_fingerprint"]
        count, m, r, k = (int(head[key]) for key in ("records", "m", "r", "path_len"))
    except (KeyError, ValueError) as exc:
        raise DatabaseError(f"{path}: bad or missing header field ({exc})") from None
    if basis is not None and basis.fingerprint() != fingerprint:
        raise DatabaseError(f"{path}: database was built from a different modal basis")
    body = lines[pos:]
    if len(body) != 5 * count:
        raise DatabaseError(f"{path}: expected {count} records, file holds {len(body) / 5:g} (truncated?)")
    records = []
    for i in range(count):
        block = body[5 * i : 5 * i + 5]
        lineno = pos + 5 * i + 1
        try:
            tag, rid = block[0].split()
            if tag != "record" or int(rid) != i:
                raise ValueError
            fields = {}
            for name, ln in zip(("disp", "q", "contour", "cpoints"), block[1:]):
                key, _, rest = ln.partition(" ")
                if key != name:
                    raise ValueError
                fields[name] = np.array([float(v) for v in rest.split()])
            rec = ShapeRecord(
                i,
                fields["disp"].reshape(-1, 2),
                fields["q"],
                Contour2D(fields["contour"].reshape(-1, 2)),
                fields["cpoints"].reshape(-1, 2),
            )
        except (ValueError, ContourError):
            raise DatabaseError(f"{path}: malformed record starting at line {lineno}") from None
        _check_record(rec, cfg, m, r, k)
        records.append(rec)
    return ShapeDatabase(records, cfg, fingerprint)


def verify_records(db, mesh, basis, path):
    """Re-run reconstruction and the plausibility filter on every record; return failures."""
    rest = project_contour(mesh, path, np.zeros((mesh.n_nodes, 3)))
    failures = []
    for rec in db.records:
        u = reconstruct(basis, rec.q, warp=db.gen_config.warp)
        contour = project_contour(mesh, path, u)
        verdict = plausibility_filter(mesh, u, contour, rest, db.gen_config.filter)
        if not verdict:
            failures.append((rec.id, verdict.reason))
        elif np.any(np.abs(rec.constraint_disp) > db.gen_config.max_disp):
            failures.append((rec.id, "displacement above max_disp"))
    return failures
