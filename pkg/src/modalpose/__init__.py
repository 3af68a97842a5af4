"""Contour-driven posing of a modal-reduced tetrahedral FEM model."""

from .contour import Contour2D, ScoringConfig, msd, objective_score, penalty, resample_equidistant
from .estimator import ContourPoser
from .fem import FemSystem, MaterialParams, assemble, element_stiffness
from .fixtures import load_bundled_fixture
from .mesh import MidsagittalPath, TetMesh, extract_surface, load_mesh, midsagittal_path
from .modal import ModalBasis, ModalState, reconstruct, solve_constrained_pose, solve_modes, step_modal
from .retrieval import MatchResult, best_match, track_sequence
from .shape_db import ShapeDatabase, ShapeRecord, generate_database, load_database, save_database

__version__ = "0.1.0"

__all__ = [
    "Contour2D", "ContourPoser", "FemSystem", "MatchResult", "MaterialParams", "MidsagittalPath",
    "ModalBasis", "ModalState", "ScoringConfig", "ShapeDatabase", "ShapeRecord", "TetMesh",
    "assemble", "best_match", "element_stiffness", "extract_surface", "generate_database",
    "load_bundled_fixture", "load_database", "load_mesh", "midsagittal_path", "msd", "objective_score", "penalty",
    "reconstruct", "resample_equidistant", "save_database", "solve_constrained_pose",
    "solve_modes", "step_modal", "track_sequence",
]
