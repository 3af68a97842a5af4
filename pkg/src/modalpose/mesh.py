"""Tetrahedral meshes: loading, validation, surface queries and OBJ export."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

logger = logging.getLogger(__name__)

# outward faces of a positively oriented tet (a, b, c, d)
_TET_FACES = np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]])

DEGENERATE_RTOL = 1e-12


class MeshError(ValueError):
    """Raised for malformed mesh files or invalid mesh data."""


def signed_volumes(nodes, tets):
    """Signed volume of every tet, positive for the (a, b, c, d) right-hand order."""
    p = nodes[tets]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    e3 = p[:, 3] - p[:, 0]
    return np.einsum("ij,ij->i", np.cross(e1, e2), e3) / 6.0


def _bbox_volume(nodes):
    if len(nodes) == 0:
        return 0.0
    ext = nodes.max(axis=0) - nodes.min(axis=0)
    vol = float(np.prod(ext))
    if vol <= 0.0:
        vol = float(np.linalg.norm(ext)) ** 3
    return vol


def _readonly(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TetMesh:
    """Immutable linear tetrahedral mesh.

    Attributes
    ----------
    nodes : (n, 3) float array
    tets : (t, 4) int array, every tet positively oriented
    anchor_nodes : sorted int array of nodes pinned to zero displacement
    constraint_nodes : ordered int array; first/last are the contour endpoints
    """

    nodes: np.ndarray
    tets: np.ndarray
    anchor_nodes: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    constraint_nodes: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=np.float64).reshape(-1, 3)
        tets = np.asarray(self.tets, dtype=np.int64).reshape(-1, 4)
        anchors = np.unique(np.asarray(self.anchor_nodes, dtype=np.int64).ravel())
        constraints = np.asarray(self.constraint_nodes, dtype=np.int64).ravel()
        n = len(nodes)
        if tets.size and (tets.min() < 0 or tets.max() >= n):
            raise MeshError("tet index out of range")
        for name, ids in (("anchor", anchors), ("constraint", constraints)):
            if ids.size and (ids.min() < 0 or ids.max() >= n):
                raise MeshError(f"{name} node index out of range")
        if constraints.size:
            if constraints.size < 2:
                raise MeshError("need at least 2 constraint nodes")
            if len(np.unique(constraints)) != constraints.size:
                raise MeshError("constraint nodes must be distinct")
            shared = np.intersect1d(anchors, constraints)
            if shared.size:
                raise MeshError(f"nodes {shared.tolist()} are both anchor and constraint")
        vols = signed_volumes(nodes, tets)
        if np.any(vols <= 0):
            raise MeshError("tets must be positively oriented; use from_arrays() to reorient")
        object.__setattr__(self, "nodes", _readonly(nodes))
        object.__setattr__(self, "tets", _readonly(tets))
        object.__setattr__(self, "anchor_nodes", _readonly(anchors))
        object.__setattr__(self, "constraint_nodes", _readonly(constraints))

    @classmethod
    def from_arrays(cls, nodes, tets, anchor_nodes=(), constraint_nodes=()):
        """Build a mesh, flipping negatively oriented tets and rejecting bad ones."""
        nodes = np.asarray(nodes, dtype=np.float64).reshape(-1, 3)
        tets = np.array(tets, dtype=np.int64).reshape(-1, 4)
        if not np.all(np.isfinite(nodes)):
            raise MeshError("non-finite node coordinate")
        if tets.size and (tets.min() < 0 or tets.max() >= len(nodes)):
            bad = int(np.argmax((tets < 0).any(axis=1) | (tets >= len(nodes)).any(axis=1)))
            raise MeshError(f"tet {bad} references a node outside 0..{len(nodes) - 1}")
        for i, t in enumerate(tets):
            if len(set(t.tolist())) != 4:
                raise MeshError(f"tet {i} repeats a node index")
        keys = np.sort(tets, axis=1)
        _, first, counts = np.unique(keys, axis=0, return_index=True, return_counts=True)
        if np.any(counts > 1):
            dup = int(first[np.argmax(counts > 1)])
            raise MeshError(f"duplicate tet {dup}")
        vols = signed_volumes(nodes, tets)
        floor = DEGENERATE_RTOL * _bbox_volume(nodes)
        degenerate = np.abs(vols) <= floor
        if np.any(degenerate):
            raise MeshError(f"degenerate tet {int(np.argmax(degenerate))} (volume {vols[degenerate][0]:.3g})")
        flip = vols < 0
        if np.any(flip):
            logger.debug("reorienting %d tets", int(flip.sum()))
            tets[flip] = tets[flip][:, [0, 1, 3, 2]]
        return cls(nodes, tets, anchor_nodes, constraint_nodes)

    def with_node_sets(self, anchor_nodes=None, constraint_nodes=None):
        return TetMesh(
            self.nodes,
            self.tets,
            self.anchor_nodes if anchor_nodes is None else anchor_nodes,
            self.constraint_nodes if constraint_nodes is None else constraint_nodes,
        )

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_tets(self):
        return len(self.tets)

    @property
    def volumes(self):
        return signed_volumes(self.nodes, self.tets)

    @property
    def surface_faces(self):
        return extract_surface(self)

    def bbox_diagonal(self):
        if self.n_nodes == 0:
            return 0.0
        return float(np.linalg.norm(self.nodes.max(axis=0) - self.nodes.min(axis=0)))


@dataclass(frozen=True)
class MidsagittalPath:
    node_ids: tuple
    plane_tolerance: float

    def __len__(self):
        return len(self.node_ids)


def load_mesh(path, anchor_nodes=(), constraint_nodes=()):
    """Read a ``tetmesh v1`` text file.

    The format is a ``tetmesh v1`` line, a ``<node_count> <tet_count>`` line,
    then one ``x y z`` line per node and one 0-based ``i j k l`` line per tet.
    Blank lines and ``#`` comments are ignored.
    """
    path = Path(path)
    with open(path) as fh:
        lines = [(no, ln.split("#", 1)[0].strip()) for no, ln in enumerate(fh, 1)]
    lines = [(no, ln) for no, ln in lines if ln]
    if not lines or lines[0][1] != "tetmesh v1":
        raise MeshError(f"{path}: line 1: expected 'tetmesh v1' header")
    if len(lines) < 2:
        raise MeshError(f"{path}: missing count line")
    no, ln = lines[1]
    try:
        n_nodes, n_tets = (int(v) for v in ln.split())
    except ValueError:
        raise MeshError(f"{path}: line {no}: expected '<node_count> <tet_count>'") from None
    body = lines[2:]
    if len(body) != n_nodes + n_tets:
        raise MeshError(
            f"{path}: header declares {n_nodes} nodes + {n_tets} tets, found {len(body)} data lines"
        )
    nodes = np.empty((n_nodes, 3))
    tets = np.empty((n_tets, 4), dtype=np.int64)
    for k, (no, ln) in enumerate(body):
        parts = ln.split()
        try:
            if k < n_nodes:
                if len(parts) != 3:
                    raise ValueError
                nodes[k] = [float(v) for v in parts]
            else:
                if len(parts) != 4:
                    raise ValueError
                tets[k - n_nodes] = [int(v) for v in parts]
        except ValueError:
            kind = "node 'x y z'" if k < n_nodes else "tet 'i j k l'"
            raise MeshError(f"{path}: line {no}: malformed {kind} line") from None
        if k >= n_nodes and (tets[k - n_nodes].min() < 0 or tets[k - n_nodes].max() >= n_nodes):
            raise MeshError(f"{path}: line {no}: tet index out of range 0..{n_nodes - 1}")
    return TetMesh.from_arrays(nodes, tets, anchor_nodes, constraint_nodes)


def save_mesh(mesh, path):
    with open(path, "w") as fh:
        fh.write("tetmesh v1\n")
        fh.write(f"{mesh.n_nodes} {mesh.n_tets}\n")
        for x, y, z in mesh.nodes.tolist():
            fh.write(f"{x!r} {y!r} {z!r}\n")
        for t in mesh.tets:
            fh.write(" ".join(str(int(i)) for i in t) + "\n")


def extract_surface(mesh):
    """Return the (f, 3) outward-oriented faces that belong to exactly one tet."""
    if mesh.n_tets == 0:
        return np.zeros((0, 3), dtype=np.int64)
    faces = mesh.tets[:, _TET_FACES].reshape(-1, 3)
    keys = np.sort(faces, axis=1)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    boundary = counts[inverse.ravel()] == 1
    return faces[boundary]


def surface_edges(faces):
    """Unique undirected edges of a triangle list, as a sorted (e, 2) array."""
    if len(faces) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    return np.unique(np.sort(e, axis=1), axis=0)


def default_plane_tolerance(mesh):
    return 1e-6 * mesh.bbox_diagonal()


def midsagittal_path(mesh, plane_tolerance=None, start=None, end=None):
    """Surface node chain in the z = 0 plane from the first to the last constraint node.

    Nodes count as in-plane when ``|z| <= plane_tolerance``. The chain is the
    length-weighted shortest path over surface edges joining in-plane nodes.
    ``start``/``end`` override the constraint endpoints.
    """
    if (start is None or end is None) and len(mesh.constraint_nodes) < 2:
        raise MeshError("mesh has no constraint nodes")
    if plane_tolerance is None:
        plane_tolerance = default_plane_tolerance(mesh)
    start = int(mesh.constraint_nodes[0] if start is None else start)
    end = int(mesh.constraint_nodes[-1] if end is None else end)
    faces = extract_surface(mesh)
    on_surface = np.zeros(mesh.n_nodes, dtype=bool)
    on_surface[faces.ravel()] = True
    in_plane = on_surface & (np.abs(mesh.nodes[:, 2]) <= plane_tolerance)
    for label, node in (("start", start), ("end", end)):
        if not in_plane[node]:
            raise MeshError(
                f"{label} node {node} is not a surface node within {plane_tolerance:g} of z=0"
            )
    if start == end:
        return MidsagittalPath((start,), float(plane_tolerance))
    edges = surface_edges(faces)
    edges = edges[in_plane[edges[:, 0]] & in_plane[edges[:, 1]]]
    lengths = np.linalg.norm(mesh.nodes[edges[:, 0]] - mesh.nodes[edges[:, 1]], axis=1)
    n = mesh.n_nodes
    graph = coo_matrix((lengths, (edges[:, 0], edges[:, 1])), shape=(n, n)).tocsr()
    dist, pred = dijkstra(graph, directed=False, indices=start, return_predecessors=True)
    if not np.isfinite(dist[end]):
        reached = np.flatnonzero(np.isfinite(dist))
        raise MeshError(
            f"no in-plane surface path from node {start} to node {end}: "
            f"{len(reached)} in-plane nodes reachable from the start, end node isolated from them"
        )
    chain = [end]
    while chain[-1] != start:
        chain.append(int(pred[chain[-1]]))
    return MidsagittalPath(tuple(chain[::-1]), float(plane_tolerance))


def export_surface_frame(mesh, displacements, path):
    """Write the displaced boundary surface as a Wavefront OBJ file."""
    disp = np.asarray(displacements, dtype=np.float64)
    if disp.shape != (mesh.n_nodes, 3):
        raise ValueError(f"expected displacements of shape {(mesh.n_nodes, 3)}, got {disp.shape}")
    faces = extract_surface(mesh)
    used = np.unique(faces)
    remap = np.full(mesh.n_nodes, -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    pos = mesh.nodes[used] + disp[used]
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in pos.tolist()]
    lines += ["f %d %d %d" % tuple(remap[f] + 1) for f in faces]
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj_vertices(path):
    verts = []
    with open(path) as fh:
        for ln in fh:
            if ln.startswith("v "):
                verts.append([float(v) for v in ln.split()[1:4]])
    return np.array(verts).reshape(-1, 3)
