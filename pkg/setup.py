from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # the numpy kernels are used instead
    ext_modules = []
else:
    ext_modules = cythonize(
        [Extension("chantwin.ray._kernels", ["src/chantwin/ray/_kernels.pyx"], extra_compile_args=["-O3"])],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
