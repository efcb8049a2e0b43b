import os

from setuptools import find_packages, setup


setup_dir = os.path.abspath(os.path.dirname(__file__))


def read_file(filename):
    filepath = os.path.join(setup_dir, filename)
    with open(filepath) as file:
        return file.read()


def parse_git(root, **kwargs):
    """
    Parse function for setuptools_scm
    """
    from setuptools_scm.git import parse

    kwargs["describe_command"] = "git describe --dirty --tags --long"
    return parse(root, **kwargs)


setup(
    name="exciton-dot-lab",
    use_scm_version=True,
    packages=find_packages(exclude=["tests", "tests.*"]),
    zip_safe=False,
    include_package_data=True,
    package_data={"exciton_dot_lab": ["presets/*.toml", "templates/*.j2"]},
    entry_points={"console_scripts": ["edl = exciton_dot_lab.cli:main"]},
    python_requires=">=3.10",
    setup_requires=["setuptools_scm"],
    install_requires=read_file("requirements.txt").splitlines(),
    extras_require={
        "test": ["pytest", "pytest-cov"],
        "dev": read_file("requirements-dev.txt").splitlines(),
    },
    description="Monte-Carlo simulation and analysis of polarization-resolved photon statistics from quantum-dot excitons and trions",
    long_description=read_file("README.md"),
    long_description_content_type="text/markdown",
    license="Apache License, Version 2.0",
    keywords=["quantum dot", "spin qubit", "photon correlation", "g-factor"],
    classifiers=[
        "License :: OSI Approved :: Apache Software License",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: 3.12",
        "Topic :: Scientific/Engineering :: Physics",
    ],
)
