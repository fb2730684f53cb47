"""TDC nonlinearity characterization and QKD timing-error modelling."""
from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
