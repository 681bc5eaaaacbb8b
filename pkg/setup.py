"""Build the optional Cython kernels; the package falls back to pure Python."""

import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "octadepth._kernels",
                ["src/octadepth/_kernels.pyx"],
                include_dirs=[numpy.get_include()],
                # keeps float results bit-identical to the numpy oracles
                extra_compile_args=["-O2", "-ffp-contract=off"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
