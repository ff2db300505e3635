import os
from setuptools import setup

def read(fname):
    return open(os.path.join(os.path.dirname(__file__), fname)).read()

setup(
    name = "qfedlab",
    version = "0.0.1",
    description = ("Federated quantum LSTM fraud detection with random parameter selection, simulated in numpy."),
    license = "GPL 3.0",
    keywords = "federated_learning quantum_machine_learning lstm fraud_detection",
    packages=['qfedlab'],
    long_description=read('readme.md'),
    install_requires=['numpy', 'pandas', 'scipy'],
    entry_points={
        'console_scripts': ['qfedlab=qfedlab.cli:main'],
    },
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
        "License :: OSI Approved :: GPL License",
    ],
)
