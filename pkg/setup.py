import os
import sys

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

# Contraction into fused multiply-adds would change rounding relative to the
# pure-Python fallback; keep it off so both backends agree bit for bit.
compile_args = ["-O2", "-ffp-contract=off"]
link_args = []
if sys.platform != "win32" and os.environ.get("OPBAYES_NO_OPENMP") is None:
    compile_args.append("-fopenmp")
    link_args.append("-fopenmp")

extensions = [
    Extension(
        "opbayes._kernels",
        ["src/opbayes/_kernels.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=compile_args,
        extra_link_args=link_args,
    )
]

setup(ext_modules=cythonize(extensions, compiler_directives={"language_level": "3"}))
