"""Optional accelerator build.

The package is pure Python.  When Cython and a C compiler are available the
packet-level engine (``cclab.packetsim._engine``) is additionally compiled to
a C extension with identical semantics; the import machinery prefers the
extension when present and falls back to the interpreted module otherwise.

Set CCLAB_NO_EXTENSION=1 to skip the compile step entirely.
"""

import os

from setuptools import Extension, setup

_ENGINE_SRC = "src/cclab/packetsim/_engine.py"

ext_modules = []
if os.environ.get("CCLAB_NO_EXTENSION") != "1" and os.path.exists(_ENGINE_SRC):
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "cclab.packetsim._engine",
                    sources=[_ENGINE_SRC],
                    extra_compile_args=["-O2"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        pass

setup(ext_modules=ext_modules)
