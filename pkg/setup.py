from setuptools import Extension, setup

# The compiled selection kernel is optional: without Cython (or a working
# compiler) the package installs pure-Python and divsearch._kernels falls
# back to the NumPy implementation at import time.
try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "divsearch._kernels._dpp_cy",
                ["src/divsearch/_kernels/_dpp_cy.pyx"],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
