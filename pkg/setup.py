import os

import numpy as np
from setuptools import Extension, setup

# The compiled tree builder is optional: without Cython (or with
# GEOHARVEST_PURE_BUILD=1) the package installs with the numpy fallback only.
ext_modules = []
if not os.environ.get("GEOHARVEST_PURE_BUILD"):
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "geoharvest.model._forest_core",
                    ["src/geoharvest/model/_forest_core.pyx"],
                    include_dirs=[np.get_include()],
                    # no FMA contraction: keeps results bit-identical to the fallback
                    extra_compile_args=["-O2", "-ffp-contract=off"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
