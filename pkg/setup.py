"""Build the optional compiled kernels; the package works without them."""

from setuptools import setup

ext_modules = []
try:
    from Cython.Build import cythonize
    from setuptools import Extension
    import numpy  # noqa: F401
except ImportError:
    pass
else:
    ext_modules = cythonize(
        [Extension("copulameta._ckernels", ["src/copulameta/_ckernels.pyx"], extra_compile_args=["-O3"])],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
