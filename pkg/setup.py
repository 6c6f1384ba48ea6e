"""Build script for the optional compiled flow kernel.

The package works without the extension (a NumPy fallback is selected at
import time), so a failed build of ``gcdro._kernels._flowcore`` is not fatal:
set GCDRO_SKIP_EXT=1 to install pure-Python on a machine without a compiler.
"""

import os

from setuptools import setup

ext_modules = []
if not os.environ.get("GCDRO_SKIP_EXT"):
    import numpy
    from Cython.Build import cythonize

    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "gcdro._kernels._flowcore",
                ["src/gcdro/_kernels/_flowcore.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
