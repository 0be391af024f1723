"""Build script: compiles the optional sorting/stepping kernel.

The package works without the extension (a numpy fallback is selected at
import time), so any failure here degrades to a pure-Python install.
Set SORTFLOW_NO_EXT=1 to skip the compile step explicitly.
"""

import os

from setuptools import Extension, setup


def extensions():
    if os.environ.get("SORTFLOW_NO_EXT"):
        return []
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "sortflow._speedups",
        ["src/sortflow/_speedups.pyx"],
        include_dirs=[numpy.get_include()],
        language="c++",
        # plain -O3: -ffast-math would break bitwise agreement with numpy
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], language_level=3)


setup(ext_modules=extensions())
