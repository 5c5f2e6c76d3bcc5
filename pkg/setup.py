"""Build script for the optional compiled quantization kernels.

The package works without the extension: tlbench.quant falls back to the
numpy kernels at import time if the compiled module is unavailable.
"""

from setuptools import Extension, setup

try:
    import numpy as np
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "tlbench.quant._kernels",
                ["src/tlbench/quant/_kernels.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
