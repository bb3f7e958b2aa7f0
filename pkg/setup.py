"""Build script: compiles the optional Cython kernel extension.

The package works without the extension (pure NumPy fallback is selected at
import time), so any failure here degrades gracefully to a pure build.
"""

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        ["src/powersplit/_kernels/_native.pyx"],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
    include_dirs = [numpy.get_include()]
except ImportError:
    include_dirs = []

setup(
    ext_modules=ext_modules,
    include_dirs=include_dirs,
)
