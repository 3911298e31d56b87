"""Optional compiled kernel.  Without Cython (or a C compiler) the package
installs pure Python and ``cerisier.machine`` uses ``_semantics``."""

import os

from setuptools import setup
from setuptools.command.build_ext import build_ext

ext_modules = []
if not os.environ.get("CERISIER_NO_EXT"):
    try:
        from Cython.Build import cythonize
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            ["src/cerisier/_csemantics.pyx"],
            compiler_directives={"language_level": "3"},
            quiet=True,
        )


class OptionalBuildExt(build_ext):
    """A failed compile leaves the pure-Python kernel in charge."""

    def run(self):
        try:
            super().run()
        except Exception as e:  # noqa: BLE001
            print(f"warning: compiled kernel not built ({e}); using pure Python")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as e:  # noqa: BLE001
            print(f"warning: {ext.name} not built ({e}); using pure Python")


setup(ext_modules=ext_modules, cmdclass={"build_ext": OptionalBuildExt})
