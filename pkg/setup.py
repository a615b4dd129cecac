#!/usr/bin/env python
"""Setup script for Mongelab"""

import codecs
import os
import re
from setuptools import setup, find_packages


def read(*parts):
    """Read file and return contents"""
    path = os.path.join(os.path.dirname(__file__), *parts)
    with codecs.open(path, encoding='utf-8') as fobj:
        return fobj.read()


def find_version(*file_paths):
    """Return version number from main module"""
    version_file = read(*file_paths)
    version_match = re.search(r"^__version__ = ['\"]([^'\"]*)['\"]", version_file, re.M)
    if version_match:
        return version_match.group(1)
    raise RuntimeError("Unable to find version string.")


INSTALL_REQUIRES = [
    'setuptools',
    'numpy',
    'scipy',
    'lxml',
    'Pillow'
]
EXTRAS_REQUIRE = {'test': ['pytest']}
PYTHON_REQUIRES = '>=3.8'

setup(name='mongelab',
      packages=find_packages(exclude=['tests']),
      version=find_version('mongelab', 'mongelab.py'),
      license='Apache License 2.0',
      install_requires=INSTALL_REQUIRES,
      extras_require=EXTRAS_REQUIRE,
      python_requires=PYTHON_REQUIRES,
      platforms=['POSIX', 'Windows'],
      description='Periodic optimal transport by damped Newton iteration on the Monge-Ampere equation',
      long_description='Solver for the L2 optimal transport problem between periodic densities \
        on the unit square, with spectral and finite difference inner solvers, image \
        registration and benchmark tools',
      package_data={'mongelab': ['conf/*.*']},
      zip_safe=False,
      entry_points={'console_scripts': [
          'mongelab = mongelab.mongelab:main',
          'mongelab-configure = mongelab.configure:main',
      ]},
      classifiers=[
          'Programming Language :: Python :: 3',
          'Topic :: Scientific/Engineering :: Mathematics',]
     )
