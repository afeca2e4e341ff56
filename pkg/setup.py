import os
import platform

from setuptools import Extension, setup

# Reassociation lets the compiler vectorize the per-frame reductions.
# Results stay deterministic for a given build.
COMPILE_ARGS = ["-O3", "-fno-math-errno", "-fassociative-math", "-fno-signed-zeros", "-fno-trapping-math"]
if platform.machine() == "x86_64" and os.environ.get("COGLOAD_PORTABLE") != "1":
    COMPILE_ARGS.append("-march=x86-64-v3")

ext_modules = []
if os.environ.get("COGLOAD_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "cogload._kernels",
                    ["src/cogload/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=COMPILE_ARGS,
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
