"""Concrete bilevel problem instances and dataset utilities."""

from .data import Dataset, corrupt_labels, load_csv, make_blobs, split_blobs
from .quadratic import QuadraticBilevel, TaskReference, build_quadratic
from .cleaning import HyperCleaningTask, build_hypercleaning
from .reference import inner_solve_reference

__all__ = [
    "Dataset",
    "corrupt_labels",
    "load_csv",
    "make_blobs",
    "split_blobs",
    "QuadraticBilevel",
    "TaskReference",
    "build_quadratic",
    "HyperCleaningTask",
    "build_hypercleaning",
    "inner_solve_reference",
]
