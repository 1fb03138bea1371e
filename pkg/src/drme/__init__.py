"""Split-sample doubly robust finite-location kernel test for distributional
treatment effects."""

from .data import Dataset, InputError, read_csv, write_csv
from .drscore import TestResult, hotelling_test
from .kernels import GaussianKernel
from .pipeline import (TestConfig, run_drme_test, run_fixed_location_test,
                       run_nosplit_test)

__version__ = "0.1.0"

__all__ = ["Dataset", "GaussianKernel", "InputError", "TestConfig", "TestResult",
           "hotelling_test", "read_csv", "run_drme_test", "run_fixed_location_test",
           "run_nosplit_test", "write_csv", "__version__"]
