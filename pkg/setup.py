"""Build script: compiles the transport kernel extension when a toolchain is
available, otherwise installs with the pure-numpy fallback only."""

import os
import sys

from setuptools import setup
from setuptools.command.build_ext import build_ext


def _extensions():
    if os.environ.get("UNCHART_NO_EXTENSION") == "1":
        return []
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:
        return []
    from setuptools import Extension

    ext = Extension(
        "unchart._kernels._transport",
        ["src/unchart/_kernels/_transport.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], language_level="3")


class optional_build_ext(build_ext):
    """Fall back to the pure-Python kernels if compilation fails."""

    def run(self):
        try:
            build_ext.run(self)
        except Exception as exc:  # noqa: BLE001 - any toolchain failure
            print(f"warning: extension build failed ({exc}); "
                  "using pure-Python kernels", file=sys.stderr)

    def build_extension(self, ext):
        try:
            build_ext.build_extension(self, ext)
        except Exception as exc:  # noqa: BLE001
            print(f"warning: building {ext.name} failed ({exc}); "
                  "using pure-Python kernels", file=sys.stderr)


setup(
    ext_modules=_extensions(),
    cmdclass={"build_ext": optional_build_ext},
)
