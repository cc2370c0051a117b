#!/usr/bin/env python3
"""
SBB transport solver setup script
Installs the sbb_bridge package and the sbb-bridge command
"""

from pathlib import Path

from setuptools import find_packages, setup

here = Path(__file__).parent
requirements = [
    line.strip()
    for line in (here / "requirements.txt").read_text().splitlines()
    if line.strip() and not line.startswith("#")
]

setup(
    name="sbb-bridge",
    version="1.0.0",
    description="Grid solver for one-dimensional Schroedinger-Bridge-Bass semimartingale transport",
    long_description=(here / "README.md").read_text(),
    long_description_content_type="text/markdown",
    packages=find_packages(exclude=["tests", "tests.*", "examples", "examples.*"]),
    python_requires=">=3.9",
    install_requires=requirements,
    extras_require={
        "test": (here / "tests" / "requirements.txt").read_text().split(),
    },
    entry_points={
        "console_scripts": ["sbb-bridge=sbb_bridge.cli:main"],
    },
)
