"""Backend selection: compiled Cython kernel when available, numpy fallback
otherwise. Set BLOCKPERM_BACKEND=python to force the fallback (the benchmark
command uses this to compare the two)."""

import os

from . import pykernel

_FORCED = os.environ.get("BLOCKPERM_BACKEND", "").strip().lower()

if _FORCED in ("", "compiled"):
    try:
        from . import _corelib as _impl

        BACKEND_NAME = "compiled"
    except ImportError:
        if _FORCED == "compiled":
            raise
        _impl = pykernel
        BACKEND_NAME = "python"
elif _FORCED == "python":
    _impl = pykernel
    BACKEND_NAME = "python"
else:
    raise RuntimeError(f"unknown BLOCKPERM_BACKEND: {_FORCED!r} (use 'compiled' or 'python')")

CgfProblem = _impl.CgfProblem
SolveResult = pykernel.SolveResult


def get_kernel(name: str):
    """Kernel module by name, for benchmarks and parity tests."""
    if name == "python":
        return pykernel
    if name == "compiled":
        from . import _corelib

        return _corelib
    raise ValueError(f"unknown backend: {name!r}")
