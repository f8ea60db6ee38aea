"""Hierarchical point-cloud classification for tablet metadata tasks.

Submodules are imported lazily so the CLI can configure thread pools
before any numerical library loads.
"""

__version__ = "0.1.0"

_SUBMODULES = (
    "rng", "errors", "meshio", "pointcloud", "neighbors", "autodiff",
    "layers", "network", "training", "synth", "datasets",
    "metrics", "harness", "checkpoint", "config", "cli",
)


def __getattr__(name):
    if name in _SUBMODULES:
        import importlib

        module = importlib.import_module(f".{name}", __name__)
        globals()[name] = module
        return module
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(list(globals()) + list(_SUBMODULES))
