"""Geometry, molecular graphs, bond perception and structure-quality checks."""
from .geometry import Geometry, UnknownElementError, XYZParseError, hill_formula, parse_xyz, write_xyz
from .graph import MolecularGraph, check_connectivity, check_stability, check_validity
from .perception import initial_adjacency, perceive_bonds
from .tables import TableError, allowed_valences, bond_length, max_valence

__all__ = [
    "Geometry", "MolecularGraph", "TableError", "UnknownElementError", "XYZParseError",
    "allowed_valences", "bond_length", "check_connectivity", "check_stability", "check_validity",
    "hill_formula", "initial_adjacency", "max_valence", "parse_xyz", "perceive_bonds", "write_xyz",
]
