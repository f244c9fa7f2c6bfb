import os

from setuptools import Extension, setup

# The compiled HMM kernels are optional: the package falls back to the
# pure-numpy implementation when the extension is missing. Set
# TRAINMAP_NO_EXT=1 to skip building it entirely.
ext_modules = []
if os.environ.get("TRAINMAP_NO_EXT") != "1":
    try:
        import numpy
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "trainmap.hmm._kernels",
                    ["src/trainmap/hmm/_kernels.pyx"],
                    include_dirs=[numpy.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            language_level=3,
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
