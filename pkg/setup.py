from setuptools import find_packages, setup

setup(
    name='narep-san',
    packages=find_packages(),
    version='0.1.0',
    description="Stochastic activity networks with non-anonymous replication: "
                "composition, flattening, connectivity lists and simulation",
    python_requires='>=3.10',
    install_requires=[
        'lark',
        'numpy',
        'scipy',
        'pandas',
        'tqdm',
        'joblib',
    ],
    entry_points={
        'console_scripts': [
            'san=src.san.cli:main',
        ],
    },
    license='MIT',
)
