"""Backend selection for the simulation kernels.

The compiled Cython extension is used when it imports; otherwise the numpy
implementation is.  ``GCB_LAB_BACKEND=python`` forces the fallback and
``GCB_LAB_BACKEND=compiled`` makes a missing extension an error.
"""

from __future__ import annotations

import importlib
import os
from types import ModuleType

from . import _kernels_py

MODEL_LINEAR = _kernels_py.MODEL_LINEAR
MODEL_LORENZ = _kernels_py.MODEL_LORENZ
MODEL_DESCENTE = _kernels_py.MODEL_DESCENTE
BLOWUP_NORM = _kernels_py.BLOWUP_NORM

TAG_INCREMENT = 0
TAG_INIT = 1
TAG_EXACT = 2
TAG_FAMILY = 3


def load(name: str) -> ModuleType:
    """Return the kernel module called ``name`` ("compiled" or "python")."""
    if name == "python":
        return _kernels_py
    if name == "compiled":
        return importlib.import_module("gcb_lab._kernels")
    raise ValueError(f"unknown kernel backend {name!r}")


def available() -> list[str]:
    names = ["python"]
    try:
        load("compiled")
    except ImportError:
        pass
    else:
        names.insert(0, "compiled")
    return names


def _select() -> ModuleType:
    choice = os.environ.get("GCB_LAB_BACKEND", "").strip().lower()
    if choice == "python":
        return _kernels_py
    try:
        return load("compiled")
    except ImportError:
        if choice == "compiled":
            raise
        return _kernels_py


backend = _select()
BACKEND = backend.NAME
