import os

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

ext = Extension(
    "advmm._core",
    ["src/advmm/_core.pyx"],
    include_dirs=[np.get_include()],
    library_dirs=[os.path.join(os.path.dirname(np.__file__), "random", "lib")],
    libraries=["npyrandom"],
    extra_compile_args=["-O2", "-ffp-contract=off"],
)

setup(ext_modules=cythonize([ext], language_level=3))
