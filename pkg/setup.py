from setuptools import find_packages
from setuptools import setup

setup(
    name="zocertify",
    version="0.1.0",
    description="Zeroth-order denoised smoothing and certification for black-box image classifiers.",
    long_description=open("README.md").read(),
    long_description_content_type="text/markdown",
    packages=find_packages(exclude=["tests", "tests.*", "benchmark", "benchmark.*"]),
    include_package_data=True,
    zip_safe=False,
    install_requires=[
        # file access for configs, datasets, checkpoints and run directories
        "fsspec",
        # durations, sizes and report tables
        "humanfriendly",
        # seed substreams
        "mmh3",
        # certified accuracy curves
        "sortedcontainers",
        "numpy",
        "scipy",
        "statsmodels",
    ],
    extras_require={
        "tests": [
            "pytest",
            "pytest-timeout",
        ]
    },
    python_requires=">=3.8",
    entry_points={
        "console_scripts": [
            "zocertify=zocertify.cli:main",
        ],
    },
)
