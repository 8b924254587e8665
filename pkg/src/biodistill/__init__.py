"""Self-contained biosignal representation learning toolkit.

Two-stage pipeline on synthetic wearable data: masked-autoencoder /
contrastive pre-training of a PPG encoder, then cross-modal distillation
into an accelerometry encoder, with retrieval and linear-probe evaluation.
Everything runs on a hand-rolled numpy autodiff tape; no GPU, no torch.
"""

import os as _os

# Thread caps must be in the environment before numpy loads its BLAS, so this
# runs at the very top of the package, ahead of any other import.
if _os.environ.get("BCG_DETERMINISTIC") == "1":
    import sys as _sys

    if "numpy" in _sys.modules:
        import warnings as _warnings

        _warnings.warn(
            "BCG_DETERMINISTIC=1 but numpy was already imported; "
            "thread caps may not apply to this process"
        )
    for _var in (
        "OPENBLAS_NUM_THREADS",
        "OMP_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
        "VECLIB_MAXIMUM_THREADS",
    ):
        _os.environ.setdefault(_var, "1")

__version__ = "0.1.0"


def deterministic_mode() -> bool:
    """True when BCG_DETERMINISTIC=1 was set at process start."""
    return _os.environ.get("BCG_DETERMINISTIC") == "1"
