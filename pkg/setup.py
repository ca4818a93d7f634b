"""Build the optional Cython kernels.

The package works without them: ``atbp.kernels`` falls back to the numpy
implementation when the extension is missing or fails to import.
"""
import os

from setuptools import setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # pragma: no cover - depends on toolchain
            print(f"warning: skipping compiled kernels ({exc})")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # pragma: no cover - depends on toolchain
            print(f"warning: failed to build {ext.name} ({exc})")


ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension
except ImportError:  # pragma: no cover - build-time only
    pass
else:
    if not os.environ.get("ATBP_NO_EXT"):
        ext_modules = cythonize(
            [
                Extension(
                    "atbp._ckernels",
                    ["src/atbp/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    library_dirs=[os.path.join(os.path.dirname(np.__file__), "random", "lib")],
                    libraries=["npyrandom"],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules, cmdclass={"build_ext": optional_build_ext})
