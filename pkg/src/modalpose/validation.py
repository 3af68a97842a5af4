"""Input checks shared by the estimator API."""

from __future__ import annotations

import numpy as np

from .contour import Contour2D
from .mesh import TetMesh, load_mesh


def check_contours(X):
    """Coerce X into a list of Contour2D.

    Accepts a single contour (Contour2D or (k, 2) array), a sequence of them,
    or a (n_frames, k, 2) array.
    """
    if isinstance(X, Contour2D):
        return [X]
    if isinstance(X, np.ndarray):
        if X.ndim == 2 and X.shape[1] == 2:
            return [Contour2D(X)]
        if X.ndim == 3 and X.shape[2] == 2:
            return [Contour2D(x) for x in X]
        raise ValueError(f"expected contour array of shape (k, 2) or (n, k, 2), got {X.shape}")
    try:
        items = list(X)
    except TypeError:
        raise ValueError(f"cannot interpret {type(X).__name__} as contours") from None
    if not items:
        raise ValueError("no contours given")
    if all(np.ndim(v) == 1 and len(v) == 2 for v in items) and not isinstance(items[0], Contour2D):
        return [Contour2D(items)]
    return [c if isinstance(c, Contour2D) else Contour2D(c) for c in items]


def check_mesh(X, anchors=None, constraints=None):
    """TetMesh from a mesh object or a ``tetmesh v1`` path, with node sets checked."""
    mesh = X if isinstance(X, TetMesh) else load_mesh(X)
    if anchors is not None or constraints is not None:
        mesh = mesh.with_node_sets(anchors, constraints)
    if len(mesh.anchor_nodes) == 0:
        raise ValueError("mesh needs anchor nodes")
    if len(mesh.constraint_nodes) < 2:
        raise ValueError("mesh needs at least 2 constraint nodes")
    return mesh
