"""Build script: compiles the optional fast decode core.

The extension is best-effort: if Cython or a C toolchain is missing the
package installs pure-Python and `tiva.fast` falls back to the numpy core
at import time.
"""

import os

from setuptools import setup

ext_modules = []
if os.environ.get("TIVA_NO_EXT") != "1" and os.path.exists("src/tiva/fast/_core.pyx"):
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "tiva.fast._core",
                    ["src/tiva/fast/_core.pyx"],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=["-O3", "-march=native", "-fno-math-errno"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
