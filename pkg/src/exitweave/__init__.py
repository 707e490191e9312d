"""exitweave: multi-exit classifiers with meta-learned sample weighting.

Submodules:

  numkit      float64 linear algebra, stable softmax/cross-entropy, RNG streams
  backbone    K-exit MLP with shared trunk, hand-derived per-sample gradients
  wpn         weight prediction network and its analytic backward chain
  exitpolicy  budget allocation, threshold calibration, dynamic inference
  datahub     synthetic and on-disk datasets, imbalancing, batching
  trainer     the training loops (full method plus ablation variants)
  evaluate    anytime tables and budget sweeps
  checkpoint  versioned JSON model/run containers
  gradcheck   finite-difference audits of the gradient chain
  cli         the `exitweave` command line tool
  serial      canonical JSON + base64 float64 buffer helpers
  errors      the exception hierarchy

Submodules load lazily: the CLI applies the EXITWEAVE_THREADS cap to the
BLAS thread pools before anything pulls in numpy, which only works if
importing the package itself stays import-light.
"""

from importlib import import_module

__version__ = "0.1.0"

_SUBMODULES = (
    "backbone",
    "checkpoint",
    "cli",
    "datahub",
    "errors",
    "evaluate",
    "exitpolicy",
    "gradcheck",
    "numkit",
    "serial",
    "trainer",
    "wpn",
)

__all__ = list(_SUBMODULES) + ["__version__"]


def __getattr__(name: str):
    if name in _SUBMODULES:
        return import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(__all__)
