"""
pde-shard - sub-domain parallel learning of PDE time stepping

This program is free software: you can redistribute it and/or modify
it under the terms of the GNU General Public License as published by
the Free Software Foundation, either version 3 of the License, or
(at your option) any later version.

This program is distributed in the hope that it will be useful,
but WITHOUT ANY WARRANTY; without even the implied warranty of
MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
GNU General Public License for more details.

You should have received a copy of the GNU General Public License
along with this program.  If not, see <https://www.gnu.org/licenses/>.
"""

from setuptools import find_packages, setup

setup(
    name='pdeshard',
    packages=find_packages(exclude=['tests']),
    version='0.1.0',
    description='Sub-domain parallel CNN surrogates for 2-D linearized Euler',
    license='GPLv3',
    python_requires='>=3.8',
    install_requires=['numpy>=1.20', 'pandas>=1.1'],
    extras_require={'test': ['scipy>=1.5', 'pytest', 'pytest-doctestplus']},
    entry_points={'console_scripts': ['pde-shard=pdeshard.cli:main']},
)
