"""Build the optional Cython kernels.

The extension is optional: when Cython or a C compiler is unavailable the
package installs without it and ``vwaprl.kernels`` falls back to the numpy
implementation.
"""
import os

from setuptools import setup
from setuptools.command.build_ext import build_ext as _build_ext


class optional_build_ext(_build_ext):
    def run(self):
        try:
            _build_ext.run(self)
        except Exception as exc:  # compiler missing etc.
            print(f"warning: skipping Cython kernels ({exc})")

    def build_extension(self, ext):
        try:
            _build_ext.build_extension(self, ext)
        except Exception as exc:
            print(f"warning: failed to build {ext.name} ({exc})")


def _extensions():
    if os.environ.get("VWAPRL_NO_EXT"):
        return []
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        return []
    ext = Extension(
        "vwaprl._kernels",
        ["src/vwaprl/_kernels.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(ext_modules=_extensions(), cmdclass={"build_ext": optional_build_ext})
