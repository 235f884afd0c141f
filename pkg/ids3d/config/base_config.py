"""
This module contains the base class of configuration sections and the field descriptor they declare keys with
"""

from ..engine.errors import ConfigError
from ..utils.base_json_object import BaseJsonObject


__all__ = ['ConfigField', 'BaseConfigSection']


def _coerce_bool(value):
    if not isinstance(value, bool):
        raise ValueError('expected a boolean, got {!r}'.format(value))
    return value


def _coerce_int(value):
    if isinstance(value, bool) or not isinstance(value, int):
        if isinstance(value, float) and value.is_integer():
            return int(value)
        raise ValueError('expected an integer, got {!r}'.format(value))
    return value


def _coerce_float(value):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError('expected a number, got {!r}'.format(value))
    return float(value)


def _coerce_str(value):
    if not isinstance(value, str):
        raise ValueError('expected a string, got {!r}'.format(value))
    return value


def _coerce_str_list(value):
    if not isinstance(value, (list, tuple)) or not all(isinstance(v, str) for v in value):
        raise ValueError('expected a list of strings, got {!r}'.format(value))
    return list(value)


_COERCERS = {
    bool: _coerce_bool,
    int: _coerce_int,
    float: _coerce_float,
    str: _coerce_str,
    list: _coerce_str_list,
}


class ConfigField:
    """
    A validated configuration key.

    Behaves like the json objects' properties: reading returns the value or the default,
    assigning coerces the value to ``kind`` and runs ``check``, raising ConfigError on failure.
    """

    def __init__(self, kind, default, check=None, choices=None, optional=False, doc=None):
        """
        :param kind: bool, int, float, str, list or a callable coercing raw values
        :param default: Value used when the key is absent
        :param check: Predicate on the coerced value
        :param choices: Allowed values
        :param optional: If None is an accepted value
        """
        self.kind = kind
        self.default = default
        self.check = check
        self.choices = choices
        self.optional = optional
        self.__doc__ = doc
        self.name = None

    def __set_name__(self, owner, name):
        self.name = name

    def __get__(self, obj, type=None):
        if obj is None:
            return self

        value = obj.__dict__.get('_' + self.name, self.default)

        return list(value) if isinstance(value, list) else value

    def __set__(self, obj, value):
        where = '{}.{}'.format(obj.section_name, self.name)

        if value is None:
            if not self.optional:
                raise ConfigError('{}: value is required'.format(where))
            obj.__dict__['_' + self.name] = None
            return

        coerce = _COERCERS.get(self.kind, self.kind)

        try:
            value = coerce(value)
        except (ValueError, TypeError) as e:
            raise ConfigError('{}: {}'.format(where, e)) from e

        if self.choices is not None and value not in self.choices:
            raise ConfigError('{}: {!r} is not one of {}'.format(where, value, sorted(self.choices)))

        if self.check is not None and not self.check(value):
            raise ConfigError('{}: {!r} is out of range'.format(where, value))

        obj.__dict__['_' + self.name] = value


class BaseConfigSection(BaseJsonObject):
    """
    Every configuration section extends this class.

    All keys are optional and default to the documented values; unknown keys are rejected.
    """

    section_name = 'section'
    missing_field_error = staticmethod(lambda field: ConfigError('missing required key {}'.format(field)))

    def __repr__(self):
        return '<{}: {}>'.format(type(self).__name__, self.to_dict())

    @classmethod
    def field_names(cls):
        """
        :return: Declared keys in declaration order
        :rtype: list of str
        """
        names = []

        for klass in reversed(cls.__mro__):
            for name, value in vars(klass).items():
                if isinstance(value, ConfigField) and name not in names:
                    names.append(name)

        return names

    def load_optional_fields_from_dict(self, values):
        super().load_optional_fields_from_dict(values)

        known = self.field_names()

        for key, value in values.items():
            if key not in known:
                raise ConfigError('unknown key {}.{}'.format(self.section_name, key))

            setattr(self, key, value)

        self.validate()

    def validate(self):
        """
        Checks constraints spanning several keys. Called after every load.
        """

    def to_dict(self):
        result = {}

        for name in self.field_names():
            value = getattr(self, name)
            if isinstance(value, list):
                value = [v.to_dict() if hasattr(v, 'to_dict') else v for v in value]

            result[name] = value

        return result
