"""Compiled kernels for the hot loops (ray marching, ray-triangle casting).

The extension is optional: when it is not built, every caller falls back to
the vectorized numpy implementations. Set FIELDLABEL_BACKEND=python to force
the fallback even when the extension is present, or =native to require it.
"""

import os

try:
    from . import _kernels  # type: ignore[attr-defined]
except ImportError:
    _kernels = None


def available() -> bool:
    return _kernels is not None


def resolve_backend(backend, supports_native: bool = True) -> str:
    """Pick 'python' or 'native' from an explicit request or the environment."""
    if backend is None:
        backend = os.environ.get("FIELDLABEL_BACKEND", "auto")
    if backend == "auto":
        return "native" if (available() and supports_native) else "python"
    if backend == "native":
        if not available():
            raise RuntimeError("native backend requested but the compiled extension is not built")
        if not supports_native:
            raise RuntimeError("native backend requested but this input has no native path")
        return "native"
    if backend == "python":
        return "python"
    raise ValueError(f"unknown backend '{backend}' (expected auto, python or native)")
