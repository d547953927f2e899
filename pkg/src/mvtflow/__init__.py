"""MVT-Flow: normalizing-flow anomaly detection for multivariate time series.

Semi-supervised anomaly detection on machine data (e.g. robot axis signals):
a Real-NVP-style flow with convolutional internal networks is trained on
normal recordings only; the negative log-likelihood of a recording is its
anomaly score. Ships with 1-NN and PCA baselines, a per-anomaly-type AUROC
evaluation harness, a synthetic pick-and-place data generator, and a CLI.
"""

from ._kernels import BACKEND as KERNEL_BACKEND
from .tensor import Graph, Tensor, backward, gradcheck

__version__ = "0.1.0"

__all__ = ["Graph", "Tensor", "backward", "gradcheck", "KERNEL_BACKEND",
           "__version__"]
