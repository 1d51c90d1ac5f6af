"""Pick the compiled kernels when importable, else the pure-Python ones.

Set ``FREELEVY_PURE_PYTHON=1`` to force the fallback.
"""
import os

from freelevy import _pykernels

BACKEND = "python"
kernels = _pykernels

if os.environ.get("FREELEVY_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from freelevy import _ckernels
    except ImportError:  # extension not built
        pass
    else:
        kernels = _ckernels
        BACKEND = "cython"


def get_kernels(name=None):
    """Kernel module by name (``"cython"``, ``"python"``) or the active one."""
    if name is None:
        return kernels
    if name == "python":
        return _pykernels
    if name == "cython":
        from freelevy import _ckernels

        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")
