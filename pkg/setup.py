from setuptools import setup, find_packages

setup(
    name="routerkit",
    version="0.1.0",
    description="Modelling and fitting toolkit for quantum-dot microdisk photon routers",
    packages=find_packages(exclude=("tests", "examples", "examples.*")),
    python_requires=">=3.8",
    install_requires=[
        "numpy",
        "scipy",
        "tenacity",
        "tqdm",
    ],
    extras_require={
        "test": ["pytest", "hypothesis"],
    },
    entry_points={
        "console_scripts": ["routerkit=routerkit.cli:main"],
    },
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering :: Physics",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.8",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
    ],
)
