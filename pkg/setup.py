import os

from setuptools import setup

ext_modules = []
if os.environ.get("QBEATS_NO_EXT", "") in ("", "0"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [Extension("qbeats._kernels", ["src/qbeats/_kernels.pyx"],
                       include_dirs=[np.get_include(), "src/qbeats"],
                       extra_compile_args=["-O3", "-fcx-limited-range", "-fno-math-errno", "-march=native"])],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
