import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "dpbilevel.gridwalk._walkcore",
                ["src/dpbilevel/gridwalk/_walkcore.pyx"],
                include_dirs=[np.get_include()],
            )
        ],
        language_level=3,
    )
except ImportError:
    # Pure-Python walk engine is used when the extension is unavailable.
    extensions = []

setup(ext_modules=extensions)
