import os

from pybind11.setup_helpers import ParallelCompile, Pybind11Extension, build_ext
from setuptools import setup

ROOT = os.path.dirname(os.path.abspath(__file__))

SOURCES = [
    "src/python/bindings.cpp",
    "src/moe.cpp",
    "src/corpus.cpp",
    "src/channel.cpp",
    "src/translate.cpp",
    "src/stats.cpp",
    "src/attack.cpp",
    "src/pipeline.cpp",
]

ParallelCompile("EL_NUM_BUILD_JOBS", default=8).install()

ext = Pybind11Extension(
    "expertleak._expertleak",
    SOURCES,
    include_dirs=["include", "/usr/include/eigen3"],
    define_macros=[("EL_DATA_DIR", '"%s"' % os.path.join(ROOT, "data"))],
    cxx_std=20,
    extra_compile_args=["-O2"],
)

setup(ext_modules=[ext], cmdclass={"build_ext": build_ext})
