"""Joint optical-SAR masked autoencoder pretraining on a small numpy autodiff core."""

import os as _os

__version__ = "0.1.0"

# CODEMAE_THREADS caps BLAS worker threads; it only takes effect when set
# before numpy is first imported.
if _os.environ.get("CODEMAE_THREADS"):
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _os.environ["CODEMAE_THREADS"])
