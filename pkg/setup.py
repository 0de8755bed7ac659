from setuptools import setup, Extension
from Cython.Build import cythonize
import numpy

# No -ffast-math: the python and compiled backends must agree bit-for-bit,
# which requires strict IEEE semantics in the kernels.
extensions = [
    Extension(
        "fieldlabel._native._kernels",
        ["src/fieldlabel/_native/_kernels.pyx"],
        include_dirs=[numpy.get_include()],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
]

setup(
    ext_modules=cythonize(extensions, compiler_directives={"language_level": "3"}),
)
