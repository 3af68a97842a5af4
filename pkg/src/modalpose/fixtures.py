"""Synthetic tongue-like fixture mesh.

The mesh is a curved slab: a structured (length x height x width) grid bent
along a circular arc in the x-y plane and tapered in z, then split into six
tets per cell. Width layers are symmetric about z = 0 and the middle layer sits
exactly on it, so the upper ridge of the middle layer is the midsagittal
contour. Bottom-layer nodes are anchors (floor-of-mouth attachment); four
constraint nodes are spread along the ridge from tip to root.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .mesh import TetMesh, load_mesh, save_mesh

# Kuhn split of the unit cube into 6 tets sharing the (0,0,0)-(1,1,1) diagonal;
# corners indexed as bit pattern i + 2j + 4k
_KUHN = [
    (0, 1, 3, 7),
    (0, 1, 5, 7),
    (0, 2, 3, 7),
    (0, 2, 6, 7),
    (0, 4, 5, 7),
    (0, 4, 6, 7),
]


@dataclass(frozen=True)
class FixtureSpec:
    """Generation parameters, in metres and radians."""

    n_length: int = 16
    n_height: int = 4
    n_width: int = 6
    inner_radius: float = 0.025
    thickness: float = 0.02
    arc_start: float = 0.25
    arc_end: float = 1.85
    half_width: float = 0.022
    tip_taper: float = 0.6
    n_constraints: int = 4


@dataclass(frozen=True)
class Fixture:
    mesh: TetMesh
    ridge_nodes: tuple
    spec: FixtureSpec


def _node_id(i, j, k, spec):
    return (i * (spec.n_height + 1) + j) * (spec.n_width + 1) + k


def tongue_fixture(spec=FixtureSpec()):
    """Generate the fixture mesh with its anchor/constraint sets and known ridge."""
    if spec.n_width % 2:
        raise ValueError("n_width must be even so a width layer lies on z = 0")
    nl, nh, nw = spec.n_length, spec.n_height, spec.n_width
    nodes = []
    for i in range(nl + 1):
        s = i / nl
        # i = 0 is the tip (front), i = nl the root
        theta = spec.arc_start + (spec.arc_end - spec.arc_start) * s
        width = spec.half_width * (spec.tip_taper + (1 - spec.tip_taper) * np.sin(0.5 * np.pi * min(1.0, 2 * s)))
        for j in range(nh + 1):
            radius = spec.inner_radius + spec.thickness * j / nh
            for k in range(nw + 1):
                z = (k - nw // 2) / (nw // 2) * width
                nodes.append((radius * np.cos(theta), radius * np.sin(theta), z))
    nodes = np.array(nodes)

    tets = []
    for i in range(nl):
        for j in range(nh):
            for k in range(nw):
                corner = [
                    _node_id(i + (b & 1), j + ((b >> 1) & 1), k + ((b >> 2) & 1), spec)
                    for b in range(8)
                ]
                tets.extend(tuple(corner[c] for c in t) for t in _KUHN)

    mid = nw // 2
    ridge = tuple(_node_id(i, nh, mid, spec) for i in range(nl + 1))
    picks = np.rint(np.linspace(0, nl, spec.n_constraints)).astype(int)
    constraints = [ridge[p] for p in picks]
    anchors = [_node_id(i, 0, k, spec) for i in range(nl + 1) for k in range(nw + 1)]
    mesh = TetMesh.from_arrays(nodes, tets, anchors, constraints)
    return Fixture(mesh, ridge, spec)


def fixture_config_text(mesh_name="tongue.tetmesh", mesh=None):
    if mesh is None:
        mesh = tongue_fixture().mesh
    anchors = ",".join(str(int(a)) for a in mesh.anchor_nodes)
    constraints = ",".join(str(int(c)) for c in mesh.constraint_nodes)
    return (
        "# fixture tongue model (generated by modalpose.fixtures)\n"
        f"mesh = {mesh_name}\n"
        f"anchors = {anchors}\n"
        f"constraints = {constraints}\n"
    )


def write_fixture(directory, spec=FixtureSpec()):
    """Write ``tongue.tetmesh`` and ``tongue.cfg`` into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    fx = tongue_fixture(spec)
    save_mesh(fx.mesh, directory / "tongue.tetmesh")
    (directory / "tongue.cfg").write_text(fixture_config_text("tongue.tetmesh", fx.mesh))
    return directory / "tongue.cfg"


def bundled_fixture_path(name="tongue.tetmesh"):
    return Path(str(resources.files("modalpose") / "data" / name))


def load_bundled_fixture():
    """Load the packaged fixture mesh with the node sets from its config."""
    from .config import parse_config

    cfg = parse_config(bundled_fixture_path("tongue.cfg").read_text())
    return load_mesh(bundled_fixture_path(cfg.mesh.name), cfg.anchors, cfg.constraints)
