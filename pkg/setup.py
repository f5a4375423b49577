"""Build the optional compiled kernel; the package works without it."""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("SAPSO_NO_EXT") != "1":
    try:
        import numpy  # noqa: F401
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [Extension("sapso._kernels", ["src/sapso/_kernels.pyx"],
                       extra_compile_args=["-O2", "-ffp-contract=off"])],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
