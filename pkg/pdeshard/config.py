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

# Helpers shared by the run configurations: dataclass <-> JSON-ready dicts and
# parsing of the string values found in manifests and on the command line.

import dataclasses
import enum
import os
import typing

from pdeshard.exceptions import ConfigurationError

WORKERS_ENV = 'PDESHARD_WORKERS'


def config_to_dict(config):
    """Plain dict of a config dataclass; enums by value, tuples as lists."""
    result = {}
    for f in dataclasses.fields(config):
        value = getattr(config, f.name)
        if isinstance(value, enum.Enum):
            value = value.value
        elif isinstance(value, tuple):
            value = list(value)
        result[f.name] = value
    return result


def _coerce(name, field_type, value):
    if value is None:
        return None
    origin = typing.get_origin(field_type)
    if origin is typing.Union:
        # Optional[X]
        inner = [t for t in typing.get_args(field_type) if t is not type(None)]
        if isinstance(value, str) and value.strip().lower() in ('', 'none'):
            return None
        return _coerce(name, inner[0], value)
    if origin in (tuple, list):
        if isinstance(value, str):
            value = [v for v in value.replace(',', ' ').split() if v]
        item_type = typing.get_args(field_type)[0]
        return tuple(_coerce(name, item_type, v) for v in value)
    try:
        if isinstance(field_type, type) and issubclass(field_type, enum.Enum):
            return field_type(value)
        if field_type is bool and isinstance(value, str):
            lowered = value.strip().lower()
            if lowered not in ('1', '0', 'true', 'false', 'yes', 'no'):
                raise ValueError(value)
            return lowered in ('1', 'true', 'yes')
        if field_type in (int, float, str, bool):
            return field_type(value)
    except ValueError as e:
        raise ConfigurationError(
            'Cannot read {!r} for {}: {}'.format(value, name, e)) from e
    return value


def config_from_mapping(cls, mapping):
    """
    Build a config dataclass from a dict of (possibly string) values.

    Unknown keys raise ConfigurationError; missing keys keep their defaults.

    Parameters
    ----------
    cls: type
        A dataclass type, e.g. SolverConfig
    mapping: dict
        Field name to value, values may be strings as read from a manifest

    Returns
    -------
    config: cls
    """
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(mapping) - known)
    if unknown:
        raise ConfigurationError('Unknown {} keys: {}'.format(
            cls.__name__, ', '.join(unknown)))
    values = {key: _coerce(key, hints[key], value)
              for key, value in mapping.items()}
    return cls(**values)


def resolve_workers(requested, ranks):
    """
    Size of a worker pool.

    Parameters
    ----------
    requested: int or None
        Wanted number of workers, None for one per core
    ranks: int
        Number of sub-domains; more workers than ranks are never used

    Returns
    -------
    workers: int
        min(requested or cpu count, ranks, $PDESHARD_WORKERS), at least 1
    """
    workers = requested or os.cpu_count() or 1
    cap = os.environ.get(WORKERS_ENV)
    if cap:
        try:
            workers = min(workers, int(cap))
        except ValueError as e:
            raise ConfigurationError(
                '{} must be an integer, got {!r}'.format(WORKERS_ENV, cap)
            ) from e
    return max(1, min(workers, ranks))
