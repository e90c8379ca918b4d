from setuptools import setup, find_packages
import pathlib

here = pathlib.Path(__file__).parent.resolve()

long_description = (here / 'README.md').read_text(encoding='utf-8')


def get_version(root_path):
    with open(root_path / 'src' / 'tlsxplain' / '__init__.py') as f:
        for line in f:
            if line.startswith('__version__ ='):
                return line.split('=')[1].strip().strip('"\'')


version = get_version(here)

setup(
    name='tlsxplain',
    version=version,
    license="MIT",
    description=(
        'Explainable tree-ensemble malware detection for encrypted '
        'network traffic'
    ),
    long_description=long_description,
    long_description_content_type='text/markdown',
    package_dir={'': 'src'},
    packages=find_packages(where='src', exclude=['tests', 'examples']),
    package_data={'tlsxplain': ['data/*.csv']},
    python_requires='>=3.8',
    install_requires=[
        'pydantic>=1.8.2,<2', 'PyYAML>=5.4.1', 'numpy>=1.20', 'joblib>=1.0'
    ],
    extras_require={
        'test': [
            'pytest>=6.2.5', 'hypothesis>=6.0', 'cryptography>=3.4',
            'mypy>=0.812'
        ],
    },
    entry_points={
        'console_scripts': ['tlsxplain=tlsxplain.cli:main'],
    },
    classifiers=[
        'Development Status :: 3 - Alpha',
        'Intended Audience :: Science/Research',
        'Topic :: System :: Networking :: Monitoring',
        'License :: OSI Approved :: MIT License',
        'Operating System :: OS Independent',
        'Programming Language :: Python',
        'Programming Language :: Python :: 3',
        'Programming Language :: Python :: 3.8',
    ],
)
