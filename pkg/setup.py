import numpy
from Cython.Build import cythonize
from setuptools import Extension, setup

# -ffp-contract=off: no FMA fusion, so the compiled kernels are bit-identical
# to the pure-Python fallback (same IEEE-754 operation sequence).
extensions = [
    Extension(
        "streamnet.kernels._ckern",
        ["src/streamnet/kernels/_ckern.pyx"],
        include_dirs=[numpy.get_include()],
        extra_compile_args=["-O2", "-ffp-contract=off"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
]

setup(
    ext_modules=cythonize(
        extensions,
        compiler_directives={"language_level": "3", "boundscheck": False, "wraparound": False},
    )
)
