"""Unsupervised lesion segmentation via quantum-inspired filtering and QUBO solvers."""

from qmseg.imaging import BinaryMask, GrayImage, Lesion, PhantomSpec
from qmseg.graph_qubo import PixelGraph, QuboProblem
from qmseg.annealing import SaConfig, SolverOutcome
from qmseg.qfilter import FilterConfig
from qmseg.vqa import VqaConfig

__version__ = "0.1.0"

__all__ = [
    "BinaryMask",
    "FilterConfig",
    "GrayImage",
    "Lesion",
    "PhantomSpec",
    "PixelGraph",
    "QuboProblem",
    "SaConfig",
    "SolverOutcome",
    "VqaConfig",
]
