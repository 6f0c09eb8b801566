from setuptools import setup, find_packages
import pathlib

here = pathlib.Path(__file__).parent.resolve()

# Get the long description from the README file
long_description = (here / 'README.md').read_text(encoding='utf-8')

install_requires = [
    "numpy>=1.17.0",
    "scipy>=1.4.1",
    "pandas>=1.0.0",
    "pytest>=5.0.0",
    "tqdm>=4.40.0",
]

setup(
    name = 'metaspoof',
    packages=['metaspoof'],
    version = '0.1.0',
    description = ('Episodic meta-learning (ProtoNet and ProtoMAML) for '
                   'few-shot adaptation of bonafide vs spoof detectors.'),
    license = 'MIT',
    keywords = ['meta-learning', 'few-shot', 'anti-spoofing'],
    long_description_content_type='text/markdown',
    long_description=long_description,
    install_requires=install_requires,
    scripts=['scripts/metaspoof_run.py'],
    classifiers=[
        'Development Status :: 2 - Pre-Alpha',
        'Intended Audience :: Science/Research',
        'Topic :: Scientific/Engineering :: Artificial Intelligence',
        'License :: OSI Approved :: MIT License',
        'Natural Language :: English',
        'Programming Language :: Python :: 3',
        'Programming Language :: Python :: 3.7',
        'Programming Language :: Python :: 3.8',
        'Programming Language :: Python :: 3.9',
        "Programming Language :: Python :: 3.10",
        'Programming Language :: Python :: 3 :: Only',
    ],
    python_requires='>=3.7',
)
