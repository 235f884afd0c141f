"""
This module contains the exception hierarchy of the detection engine
"""

__all__ = ['IdsError', 'ConfigError', 'FlowParseError', 'DataError', 'OrderingError', 'ShapeError',
           'SolverError', 'IntegrationError', 'NonFiniteError', 'SelfLoopError', 'OutputError', 'CheckpointError']


class IdsError(Exception):
    """
    Every engine error extends this class.

    ``exit_code`` is the process exit status the command line uses for the category.
    """
    exit_code = 1


class ConfigError(IdsError):
    exit_code = 2


class FlowParseError(IdsError):
    """
    Raised when a flow record cannot be parsed. ``field`` names the offending column.
    """
    exit_code = 3

    def __init__(self, field, message):
        super().__init__('{}: {}'.format(field, message))
        self.field = field


class DataError(IdsError):
    exit_code = 3


class OrderingError(IdsError):
    """
    The event stream went back in time for a node
    """
    exit_code = 3

    def __init__(self, node, t, last_update_t):
        super().__init__('event at t={} for node {} precedes its last update at t={}'.format(t, node, last_update_t))
        self.node = node
        self.t = t
        self.last_update_t = last_update_t


class ShapeError(IdsError):
    exit_code = 2


class SolverError(IdsError):
    exit_code = 5

    def __init__(self, message, iterations):
        super().__init__('{} (after {} iterations)'.format(message, iterations))
        self.iterations = iterations


class IntegrationError(IdsError):
    exit_code = 5

    def __init__(self, message, step_size):
        super().__init__('{} (rejected step size {!r})'.format(message, step_size))
        self.step_size = step_size


class NonFiniteError(IdsError):
    """
    ``where`` identifies the first non-finite location: a parameter name or an edge index
    """
    exit_code = 5

    def __init__(self, where, message='non-finite value'):
        super().__init__('{} at {}'.format(message, where))
        self.where = where


class SelfLoopError(IdsError):
    exit_code = 3

    def __init__(self, node):
        super().__init__('self-loop on node {} cannot enter the incidence matrix'.format(node))
        self.node = node


class OutputError(IdsError):
    """
    A file could not be read or written
    """
    exit_code = 4


class CheckpointError(OutputError):
    pass
