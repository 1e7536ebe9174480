from setuptools import find_packages, setup

setup(
    name="hypokinetic",
    version="0.1.0",
    packages=find_packages(exclude=["tests"]),
    python_requires=">=3.11",
    install_requires=[
        "numpy",
        "scipy>=1.12",
        "pandas",
        "joblib",
        "pydantic>=2",
        "sympy",
    ],
    extras_require={
        "plots": ["matplotlib", "seaborn"],
        "test": ["pytest"],
    },
    entry_points={
        "console_scripts": ["hypo=hypokinetic.cli:main"],
    },
)
