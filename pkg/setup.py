#!/usr/bin/env python

from setuptools import setup

setup(
    name='restoretune',
    version='0.1.0',
    license='BSD 3-clause license',
    description='Test-time fine-tuning of inpainting networks on their own restorations',
    long_description='A desk-scale experiment harness written in Python which '
                     'pre-trains a small inpainting network on a synthetic corpus, '
                     'then fine-tunes it on each test image by re-masking and '
                     'restoring its own first restoration.',
    classifiers=[
        'Environment :: Console',
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: BSD License',
        'Operating System :: MacOS',
        'Operating System :: POSIX :: Linux',
        'Programming Language :: Python',
        'Programming Language :: Python :: 3.8',
        'Programming Language :: Python :: 3.9',
        'Programming Language :: Python :: 3.10',
        'Topic :: Scientific/Engineering :: Image Processing',
    ],
    python_requires='>=3.8',
    packages=[
        'restoretune',
        'restoretune.tests'
    ],
    scripts=['scripts/restoretune'],
    include_package_data=True,
    install_requires=[
        'lxml',
        'numpy',
        'Pillow',
        'scipy',
        'torch',
    ],
    extras_require={
        'dev': [
            'coverage',
            'pylint',
            'twine',
            'wheel',
        ]
    }
)
