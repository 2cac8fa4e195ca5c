"""Build script: compiles the optional Cython convolution kernels.

The package works without the extension (a numpy fallback is selected at
import time), so the extension is marked optional and a failed compile
does not fail the install.
"""

from setuptools import setup
from setuptools.extension import Extension

try:
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "boxprompt.kernels._convkernels",
                ["src/boxprompt/kernels/_convkernels.pyx"],
                extra_compile_args=["-O3", "-march=native", "-fno-math-errno"],
                optional=True,
            )
        ],
        language_level=3,
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
