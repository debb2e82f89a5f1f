"""Build script: compiles the optional Cython kernel.

The package works without the extension (a pure-numpy fallback is selected at
import time), so a failed compile only costs speed, not functionality.
"""

from setuptools import setup, Extension

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "blockperm._backend._corelib",
                ["src/blockperm/_backend/_corelib.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
