"""Conformal prediction regions scored by conditional generative models.

Subpackages are loaded lazily so that importing the top-level package
stays cheap and the command-line entry point can pin thread counts
before any numerics are initialized.

Modules
-------
network      small conditional networks, training updates, checkpoints
genmodels    denoising and flow models, training loops, samplers
scoring      nonconformity scores and the shared noise bank
conformal    split calibration, thresholds, coverage
regions      quasi-random volume estimation and region masks
data         synthetic generators, CSV ingestion, splits
experiments  multi-seed benchmarks, ablations, theory checks, reports
"""

__version__ = "0.1.0"

_SUBMODULES = (
    "network",
    "genmodels",
    "scoring",
    "conformal",
    "regions",
    "data",
    "experiments",
    "cli",
    "errors",
)


def __getattr__(name):
    if name in _SUBMODULES:
        import importlib

        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(list(globals()) + list(_SUBMODULES))
