"""Build hook for the optional compiled kernel.

The extension is optional: when Cython or a C compiler is missing the
package installs without it and falls back to the numpy kernels.
"""
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pragma: no cover
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "salab.kernels._core",
                ["src/salab/kernels/_core.pyx"],
                # contraction into FMA would break bitwise parity with numpy
                extra_compile_args=["-O2", "-ffp-contract=off"],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
