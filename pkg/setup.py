import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

if cythonize is not None:
    extensions = cythonize(
        [
            Extension(
                "amcgraph._core",
                ["src/amcgraph/_core.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3", "-fopenmp"],
                extra_link_args=["-fopenmp"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
else:
    # no Cython: install without the compiled core, the numpy
    # fallback backend is selected at import time
    extensions = []

setup(ext_modules=extensions)
