from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

# The split-search kernel is optional: if Cython or a C compiler is missing
# the package falls back to the numpy implementation at import time.
extensions = [
    Extension(
        "flowcodec.forest._split_cy",
        ["src/flowcodec/forest/_split_cy.pyx"],
        optional=True,
    )
]

setup(
    ext_modules=cythonize(
        extensions,
        compiler_directives={"language_level": "3", "boundscheck": False, "wraparound": False},
    )
    if cythonize
    else [],
)
