import os

import numpy as np
from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """Build the compiled kernels if possible; the package falls back to numpy otherwise."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # noqa: BLE001
            print(f"warning: compiled kernels not built ({exc}); using the numpy fallback")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # noqa: BLE001
            print(f"warning: failed to build {ext.name} ({exc}); using the numpy fallback")


ext_modules = []
if os.environ.get("GCB_LAB_NO_EXTENSION") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        try:
            ext_modules = cythonize(
                [
                    Extension(
                        "gcb_lab._kernels",
                        ["src/gcb_lab/_kernels.pyx"],
                        include_dirs=[np.get_include()],
                        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                        extra_compile_args=["-O3", "-fno-math-errno", "-ffp-contract=off"],
                    )
                ],
                compiler_directives={"language_level": "3"},
            )
        except Exception as exc:  # noqa: BLE001
            print(f"warning: cythonize failed ({exc}); using the numpy fallback")

setup(ext_modules=ext_modules, cmdclass={"build_ext": OptionalBuildExt})
