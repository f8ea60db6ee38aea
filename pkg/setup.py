"""Builds the optional compiled k-NN kernels.

The package works without them (a pure-numpy fallback is selected at
import time); the extension just makes the neighbor search fast.
"""

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

ext_modules = []
if cythonize is not None:
    ext_modules = cythonize(
        [
            Extension(
                "ppcnet.neighbors._kernels",
                ["src/ppcnet/neighbors/_kernels.pyx"],
                extra_compile_args=["-O3"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            ),
            Extension(
                "ppcnet._fastops",
                ["src/ppcnet/_fastops.pyx"],
                extra_compile_args=["-O3"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            ),
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
