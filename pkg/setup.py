"""Build script: compiles the optional accelerator extension.

The package is pure Python plus one Cython extension for the hot
objective-field kernels.  The extension is optional: if Cython or a C
compiler is unavailable the build falls back to the numpy implementation
selected at import time (mimoloc._kernels).
"""
from setuptools import Extension, setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext = Extension(
        "mimoloc._kernels._core",
        sources=["src/mimoloc/_kernels/_core.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
    ext.optional = True  # compile failure degrades to the numpy fallback
    ext_modules = cythonize([ext], compiler_directives={"language_level": "3"})
except ImportError:
    pass

setup(ext_modules=ext_modules)
