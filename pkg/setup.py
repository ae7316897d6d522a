import codecs
import os
import re

from setuptools import setup, find_packages

with open("README.md", "r") as readme_file:
    long_description = readme_file.read()

here = os.path.abspath(os.path.dirname(__file__))


def read(*parts):
    with codecs.open(os.path.join(here, *parts), "r") as fp:
        return fp.read()


def find_version(*file_paths):
    version_file = read(*file_paths)
    version_match = re.search(r"^__version__ = ['\"]([^'\"]*)['\"]", version_file, re.M)
    if version_match:
        return version_match.group(1)
    raise RuntimeError("Unable to find version string.")


setup(
    name="ensemblemoments",
    version=find_version("ensemblemoments", "__init__.py"),
    description="Moment-space trajectory optimization for ensembles of unicycles with"
    " uncertain traction, with obstacle avoidance and temporal-logic tasks.",
    license="MIT",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=find_packages(exclude=["demo", "tests"]),
    package_data={"ensemblemoments.scenarios": ["data/*.scenario", "data/*.expected"]},
    install_requires=[
        "numpy>=1.20.0",
        "scipy>=1.7.0,<2",
        "matplotlib>=3.5.0,<4",
        "PyYAML>=5.1",
        "tqdm>=4.31.1",
    ],
    entry_points={
        "console_scripts": ["ensemblemoments=ensemblemoments.scenarios.cli:main"],
    },
    python_requires=">=3.8",
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering",
        "Topic :: Scientific/Engineering :: Mathematics",
    ],
)
