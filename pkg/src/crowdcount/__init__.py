"""Crowd counting with density maps and deliberately imperfect labels.

Submodules are imported lazily so the CLI can pin BLAS thread pools via
environment variables before numpy loads.
"""

__version__ = "0.1.0"

_SUBMODULES = (
    "cli",
    "dataio",
    "density",
    "metrics",
    "models",
    "nn",
    "pipeline",
    "scenes",
    "seeding",
)

__all__ = list(_SUBMODULES) + ["__version__"]


def __getattr__(name):
    if name in _SUBMODULES:
        import importlib

        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(__all__)
