"""Signal-level estimation in high-dimensional regression with zero-estimator corrections."""

__version__ = "0.1.0"

from .datamodel import LabeledDataset, UnlabeledDataset, load_csv, write_csv  # noqa: E402
from .naive import Estimate, WMatrix, naive_tau2, w_matrix  # noqa: E402
from .whitening import CovariateModel, estimate_moments, whiten  # noqa: E402

__all__ = [
    "__version__",
    "CovariateModel",
    "Estimate",
    "LabeledDataset",
    "UnlabeledDataset",
    "WMatrix",
    "estimate_moments",
    "load_csv",
    "naive_tau2",
    "w_matrix",
    "whiten",
    "write_csv",
]
