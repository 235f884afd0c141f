"""
This module contains classes for representing lazy property
"""

__all__ = ['lazy_property', 'invalidate_lazy_properties']


class lazy_property(property):
    """
    Decorator for lazy property.

    The first call of __get__ evaluates the getter and caches the result on the instance.
    The other calls return the cached result until :func:`invalidate_lazy_properties` drops it,
    which owners call whenever the inputs of the getter change.
    """
    def __init__(self, fget=None, fset=None, fdel=None, doc=None):
        super().__init__(fget, fset, fdel, doc)

        self._prop_name = '__impl_lazy_' + fget.__name__

    def __get__(self, obj, type=None):
        if obj is None:
            return self

        try:
            return obj.__dict__[self._prop_name]
        except KeyError:
            value = super().__get__(obj, type)
            obj.__dict__[self._prop_name] = value
            return value


def invalidate_lazy_properties(obj):
    """
    Drops every cached lazy property value of ``obj``
    """
    for key in [k for k in obj.__dict__ if k.startswith('__impl_lazy_')]:
        del obj.__dict__[key]
