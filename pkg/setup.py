"""A setuptools based setup module.

Derived from:
https://packaging.python.org/en/latest/distributing.html
https://github.com/pypa/sampleproject
"""

# Always prefer setuptools over distutils
from setuptools import setup, find_packages
# To use a consistent encoding
from codecs import open
from os import path

here = path.abspath(path.dirname(__file__))

# Get the long description from the README file
with open(path.join(here, 'README.rst'), encoding='utf-8') as f:
    long_description = f.read()

setup(
    name='pyfpa',
    version='0.1.0',
    description='Numerical certification of welfare guarantees for first-price auctions',
    long_description=long_description,
    license='Apache2',
    classifiers=[
        'Development Status :: 3 - Alpha',
        'Intended Audience :: Science/Research',
        'Topic :: Scientific/Engineering :: Mathematics',
        'License :: OSI Approved :: Apache Software License',
        'Programming Language :: Python :: 3',
    ],
    keywords='auction first-price bayes-nash equilibrium price-of-anarchy welfare',
    packages=find_packages(exclude=['tests']),
    package_data={'pyfpa' : [ 'instances/*.json' ]},
    python_requires='>=3.9',
    install_requires=[
        'numpy>=1.20',
        'scipy>=1.6',
    ],
    zip_safe=False,
    entry_points={
        'console_scripts': [
            'pyfpa=pyfpa.__main__:main',
        ],
    },
)
