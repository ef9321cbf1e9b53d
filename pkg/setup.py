"""Build script: compiles the optional kernel extension.

The package works without the extension (a numpy fallback is selected at
import time), so a failed compile downgrades to a warning instead of
aborting the install. Set TRAILDIFF_NO_EXT=1 to skip compilation entirely.
"""

import os
import sys

from setuptools import setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    """build_ext that tolerates a missing compiler toolchain."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # CompileError, DistutilsError, ...
            self._warn(exc)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            self._warn(exc)

    @staticmethod
    def _warn(exc):
        sys.stderr.write(
            "warning: compiled kernels unavailable (%s); "
            "falling back to pure numpy kernels\n" % exc
        )


ext_modules = []
cmdclass = {}

if not os.environ.get("TRAILDIFF_NO_EXT"):
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "traildiff._ckernels",
                    ["src/traildiff/_ckernels.pyx"],
                    include_dirs=[numpy.get_include()],
                    define_macros=[
                        ("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")
                    ],
                    extra_compile_args=["-O3"],
                )
            ],
            language_level=3,
        )
        cmdclass["build_ext"] = optional_build_ext
    except ImportError as exc:
        sys.stderr.write(
            "warning: Cython/numpy missing at build time (%s); "
            "skipping compiled kernels\n" % exc
        )

setup(ext_modules=ext_modules, cmdclass=cmdclass)
