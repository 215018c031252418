from setuptools import setup

# get the version here
pkg_vars  = {}

with open("version.py") as fp:
    exec(fp.read(), pkg_vars)

setup(
    name='teamopt',
    version= pkg_vars['__version__'],
    description='Team-optimal and person-by-person strategies for distributed optimal control',
    license='BSD',
    packages=['teamopt_solver', 'teamopt_wrapper'],
    python_requires='>=3.8',
    zip_safe=False,
    install_requires=[
        'numpy>=1.20',
        'scipy>=1.6',
        'pandas>=1.1',
        'pyyaml>=5.1'
    ],
    entry_points={
        'console_scripts': ['teamopt=teamopt_wrapper.team_cli:main'],
    },
)
