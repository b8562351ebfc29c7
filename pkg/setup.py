"""Build script for the optional compiled kernel extension.

The package is pure Python plus one Cython extension holding the hot
loops (nearest-centroid scans, cluster accumulation, Markov sampling).
If Cython or a C compiler is unavailable the build degrades to the
pure-numpy fallback in unitprompt.kernels; nothing else changes.
"""

import sys

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """Build the extension if possible, warn and continue otherwise."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing, etc.
            self._warn(exc)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            self._warn(exc)

    @staticmethod
    def _warn(exc):
        print(
            f"warning: compiled kernels not built ({exc}); "
            "falling back to pure-numpy kernels",
            file=sys.stderr,
        )


try:
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "unitprompt.kernels._ckernels",
                ["src/unitprompt/kernels/_ckernels.pyx"],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions, cmdclass={"build_ext": OptionalBuildExt})
