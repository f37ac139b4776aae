"""Build script for the optional compiled kernels.

If the extension cannot be compiled the package still installs and falls
back to the numpy kernels at import time.
"""

import os
import sys

import numpy as np
from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext

try:
    from Cython.Build import cythonize
except ImportError:  # pragma: no cover
    cythonize = None

openmp = [] if sys.platform == "darwin" or os.environ.get("GROUPENC_NO_OPENMP") else ["-fopenmp"]

extensions = [
    Extension(
        "groupenc.kernels._ckernels",
        ["src/groupenc/kernels/_ckernels.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        # no -ffast-math / -march=native: roundings must match the numpy fallback
        extra_compile_args=["-O3", "-ffp-contract=off", *openmp],
        extra_link_args=openmp,
    )
]


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # noqa: BLE001
            print(f"warning: compiled kernels not built ({exc}); using numpy fallback")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # noqa: BLE001
            print(f"warning: failed to build {ext.name} ({exc}); using numpy fallback")


setup(
    ext_modules=cythonize(extensions, compiler_directives={"language_level": "3"}) if cythonize else [],
    cmdclass={"build_ext": OptionalBuildExt},
)
