import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("CONEWAVE_NO_EXT"):
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "conewave._nudft",
                    ["src/conewave/_nudft.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3", "-fopenmp"],
                    extra_link_args=["-fopenmp"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
