"""Build the optional compiled kernels.

The Cython extension is optional: if it cannot be compiled, the package
falls back to the pure-Python kernels at import time.
"""
import os

from setuptools import Extension, setup

ext_modules = []
PYX = os.path.join("src", "roimpc", "_ckernels.pyx")
if not os.environ.get("ROIMPC_NO_EXT") and os.path.exists(PYX):
    try:
        import numpy as np
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "roimpc._ckernels",
                    [PYX],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
                "initializedcheck": False,
            },
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
