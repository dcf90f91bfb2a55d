"""Thermo-mechanical contact with a third medium and low-order elements."""

from .material import MediumParams, SolidParams
from .mesh import Mesh, generate_preset_mesh, load_mesh
from .solver import DirichletItem, LoadProgram, NeumannItem, Problem, StepControls, run_load_program

__all__ = [
    "DirichletItem",
    "LoadProgram",
    "MediumParams",
    "Mesh",
    "NeumannItem",
    "Problem",
    "SolidParams",
    "StepControls",
    "generate_preset_mesh",
    "load_mesh",
    "run_load_program",
]
__version__ = "0.1.0"
