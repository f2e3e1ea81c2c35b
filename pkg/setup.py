"""Builds the optional compiled kernel extension.

The package works without it (a numpy fallback is selected at import time),
so a failed compile only costs speed. -ffp-contract=off and the absence of
-march keep the compiled accumulation order bit-identical to the fallback.
"""

from setuptools import Extension, setup

try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "dvme.numerics._kernels",
                ["src/dvme/numerics/_kernels.pyx"],
                extra_compile_args=["-O3", "-ffp-contract=off"],
                include_dirs=[numpy.get_include()],
            )
        ],
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "initializedcheck": False,
            "cdivision": True,
        },
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
