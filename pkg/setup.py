import setuptools
import sys
import re
import os

if sys.version_info < (3, 8):
    print('pyrejective requires at least Python 3.8 to run.')
    sys.exit(1)

with open(os.path.join('pyrejective', '__init__.py'), encoding='utf-8') as f:
    version = re.search(r"^__version__ = ['\"]([^'\"]*)['\"]", f.read(), re.M).group(1)

with open('README.md', 'r') as fh:
    long_description = fh.read()

setuptools.setup(
    name='pyrejective',
    version=version,
    python_requires='>=3.8',
    author='pyrejective contributors',
    description='Poisson-Binomial local expansions, rejective sampling and case-control logistic estimators',
    long_description=long_description,
    long_description_content_type='text/markdown',
    data_files=[('share/doc/pyrejective', ['README.md', 'simulation.yml'])],
    packages=['pyrejective'],
    install_requires=['pyyaml >= 5.1', 'crayons', 'numpy >= 1.20', 'scipy >= 1.6'],
    entry_points={"console_scripts": ["pyrejective=pyrejective.cli:main"]},
    classifiers=[
      'Programming Language :: Python :: 3',
      'Environment :: Console',
      'Topic :: Scientific/Engineering :: Mathematics',
      'License :: OSI Approved :: GNU General Public License v3 (GPLv3)',
      'Intended Audience :: Science/Research',
      'Natural Language :: English',
      'Operating System :: OS Independent',
    ],
    keywords='poisson-binomial rejective-sampling conditional-logistic case-control',
)
