import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

extensions = [
    Extension(
        "sethar.backend._poolcore",
        ["src/sethar/backend/_poolcore.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
]

if cythonize is not None:
    ext_modules = cythonize(
        extensions,
        compiler_directives={"language_level": 3, "embedsignature": True},
    )
else:
    # No Cython at build time: install pure, the package selects the
    # python kernels at import.
    ext_modules = []

setup(ext_modules=ext_modules)
