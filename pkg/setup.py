# -*- coding: utf-8

import os

from setuptools import find_packages, setup

here = os.path.abspath(os.path.dirname(__file__))
# Get __version__ variable
exec(open(os.path.join(here, 'hydraens', 'version.py')).read())

with open(os.path.join(here, 'README.md'), encoding='utf-8') as f:
    long_description = f.read()

setup(
    name='hydraens',
    version=__version__,
    description='Pruned and fused transformer ensembles',
    classifiers=[
        'Development Status :: 3 - Alpha',

        'Intended Audience :: Science/Research',

        'License :: OSI Approved :: MIT License',
        'Operating System :: POSIX',
        'Operating System :: POSIX :: Linux',

        'Programming Language :: Python :: 3.8',
        'Programming Language :: Python :: 3.9',
        'Programming Language :: Python :: 3.10',

        'Topic :: Scientific/Engineering :: Artificial Intelligence',
    ],
    long_description=long_description,
    long_description_content_type='text/markdown',
    packages=find_packages(exclude=('tests', 'tests.*')),
    extras_require={
        'test': ['pytest', 'flake8', 'autopep8', 'parameterized', 'isort'],
        # When updating doc deps, docs/requirements.txt should be updated too
        'doc': ['sphinx', 'sphinx_rtd_theme'],
    },
    # functools.cached_property
    python_requires=">=3.8",
    # When updating install requires, docs/requirements.txt should be updated too
    install_requires=['numpy>=1.19.5', 'scipy>=1.6.0'],
    entry_points={
        'console_scripts': ['hydraens=hydraens.cli:main'],
    },
    zip_safe=False,

    keywords='transformer ensemble pruning uncertainty',
)
