import os

from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("CAVAT_SKIP_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "cavat._gridext",
                    ["src/cavat/_gridext.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            language_level=3,
        )
    except ImportError:
        # No Cython available: install the pure-numpy fallback only.
        ext_modules = []

setup(ext_modules=ext_modules)
