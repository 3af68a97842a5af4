"""Scikit-learn style wrapper around the posing pipeline."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .contour import ScoringConfig
from .fem import MaterialParams, assemble
from .mesh import midsagittal_path
from .modal import reconstruct, solve_modes
from .retrieval import ScoringIndex, best_match, track_sequence
from .shape_db import FilterConfig, generate_database
from .validation import check_contours, check_mesh


class ContourPoser(BaseEstimator):
    """Select a deformed 3D shape for each midsagittal contour.

    ``fit`` takes a TetMesh (or mesh path) carrying anchor and constraint
    nodes, builds the modal basis and the shape database. ``predict`` maps
    contours to database record ids, ``transform`` to modal coordinates.

    Parameters
    ----------
    n_modes : int
        Retained modes.
    n_samples : int
        Database size.
    max_disp : float or None
        Bound on each constraint displacement component; None picks 15% of
        the rest contour length.
    alpha, beta : float
        Objective weights of 1/MSD and 1/penalty.
    resample_n : int
        Points per compared contour.
    """

    def __init__(self, n_modes=30, n_samples=1000, max_disp=None, seed=0, alpha=0.8, beta=0.2,
                 resample_n=12, eps=1e-6, youngs_modulus=6000.0, poisson_ratio=0.49,
                 density=1040.0, xi=0.1, zeta=0.01, plane_tolerance=None, backtrack_tol=0.0,
                 warp=False, msd_guard=1e-9, penalty_guard=1e-9, n_jobs=1):
        self.n_modes = n_modes
        self.n_samples = n_samples
        self.max_disp = max_disp
        self.seed = seed
        self.alpha = alpha
        self.beta = beta
        self.resample_n = resample_n
        self.eps = eps
        self.youngs_modulus = youngs_modulus
        self.poisson_ratio = poisson_ratio
        self.density = density
        self.xi = xi
        self.zeta = zeta
        self.plane_tolerance = plane_tolerance
        self.backtrack_tol = backtrack_tol
        self.warp = warp
        self.msd_guard = msd_guard
        self.penalty_guard = penalty_guard
        self.n_jobs = n_jobs

    def _scoring(self):
        return ScoringConfig(self.resample_n, self.alpha, self.beta, self.msd_guard, self.penalty_guard)

    def fit(self, X, y=None):
        mesh = check_mesh(X)
        material = MaterialParams(self.youngs_modulus, self.poisson_ratio, self.density)
        self.mesh_ = mesh
        self.system_ = assemble(mesh, material, self.xi, self.zeta)
        self.basis_ = solve_modes(self.system_, self.n_modes, mesh=mesh)
        self.path_ = midsagittal_path(mesh, self.plane_tolerance)
        self.database_ = generate_database(
            mesh, self.basis_, self.path_, self.n_samples, self.max_disp, self.seed,
            eps=self.eps, warp=self.warp, filter_cfg=FilterConfig(self.backtrack_tol),
            jobs=self.n_jobs,
        )
        self.n_records_ = len(self.database_)
        return self

    def match(self, X):
        """Full MatchResult per contour."""
        check_is_fitted(self, "database_")
        return track_sequence(check_contours(X), self.database_, self._scoring())

    def predict(self, X):
        return np.array([r.record_id for r in self.match(X)], dtype=np.int64)

    def score_samples(self, X):
        """Best objective value per contour (higher is a closer match)."""
        return np.array([r.score_l for r in self.match(X)])

    def transform(self, X):
        """(n_contours, n_modes) modal coordinates of the selected shapes."""
        ids = self.predict(X)
        return np.stack([self.database_.records[i].q for i in ids])

    def predict_displacements(self, X):
        """(n_contours, n_nodes, 3) node displacements of the selected shapes."""
        return np.stack([reconstruct(self.basis_, q, warp=self.warp) for q in self.transform(X)])

    def score(self, X, y):
        """Fraction of contours whose selected record equals ``y``."""
        return float(np.mean(self.predict(X) == np.asarray(y)))

    def record_contours(self, ids=None):
        """Projected contours of database records, for building targets."""
        check_is_fitted(self, "database_")
        recs = self.database_.records if ids is None else [self.database_.records[i] for i in ids]
        return [r.projected_contour for r in recs]

    def best_match(self, contour):
        check_is_fitted(self, "database_")
        cfg = self._scoring()
        return best_match(check_contours(contour)[0], self.database_, cfg,
                          index=ScoringIndex.build(self.database_, cfg))
