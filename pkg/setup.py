import sys

if sys.version_info.major < 3:
    print('Python 3 is required')
    sys.exit()

from setuptools import setup, find_packages

setup(
    name='ids3d',
    version='0.1.0',
    description='Streaming intrusion detection on flow records with disentangled features and multi-layer graph diffusion',
    license='MIT',
    keywords='intrusion detection netflow temporal graph diffusion',
    packages=find_packages(exclude=['tests', 'tests.*', 'examples']),
    classifiers=[
        'Development Status :: 3 - Alpha',
        'Environment :: Console',
        'License :: OSI Approved :: MIT License',
        'Operating System :: OS Independent',
        'Programming Language :: Python :: 3',
        'Topic :: System :: Networking :: Monitoring'
    ],

    python_requires='>=3.7',
    install_requires=['numpy>=1.17', 'scipy>=1.6', 'pandas>=1.0', 'scikit-learn>=0.24'],

    entry_points={
        'console_scripts': ['ids3d = ids3d.cli:main'],
    },

    test_suite='tests'
)
