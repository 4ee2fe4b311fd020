"""Build script for the optional compiled GRU kernel.

If Cython or a C compiler is missing the package still installs and falls
back to the numpy kernels at import time.
"""

import os

from setuptools import setup

ext_modules = []
if not os.environ.get("DIALSUM_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "dialsum.autodiff._gru_ext",
                    ["src/dialsum/autodiff/_gru_ext.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
