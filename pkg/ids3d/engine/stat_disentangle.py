"""
This module separates the statistical distributions of traffic features.

For one normalized feature vector it finds weights ``w`` so that the products ``p_i = w_i * F_i``,
taken in ascending feature order, are non-decreasing, discretely convex, bounded by a budget and
spread as far apart as possible. The objective and every constraint are linear in ``w``, so the
problem is solved exactly with the HiGHS linear programming backend of scipy.
"""

import logging
import threading

import numpy as np
from scipy.optimize import linprog

from .errors import ConfigError
from .errors import SolverError


__all__ = ['DisentangleProblem', 'DisentangleSolution', 'Disentangler', 'solve_disentangle', 'disentangled_edge',
           'check_constraints', 'objective_value', 'overlap_ratio', 'class_overlap_ratio', 'feature_stats']

logger = logging.getLogger(__name__)

_TIE_BREAK_SLACK = 1e-7


class DisentangleProblem:
    """
    One feature vector and the bounds of its weights
    """

    def __init__(self, features, w_min=0.0, w_max=1.0, budget=1.0, objective_variant='eq5'):
        self.features = np.asarray(features, dtype=np.float64).reshape(-1)
        self.w_min = float(w_min)
        self.w_max = float(w_max)
        self.budget = float(budget)
        self.objective_variant = objective_variant

        if self.features.size < 1:
            raise ConfigError('a disentangle problem needs at least one feature')
        if self.w_min > self.w_max:
            raise ConfigError('w_min must not exceed w_max')
        if self.budget <= 0:
            raise ConfigError('the budget must be positive')
        if objective_variant not in ('eq5', 'eq5star'):
            raise ConfigError('unknown objective variant {!r}'.format(objective_variant))

    def __repr__(self):
        return '<DisentangleProblem: N={} w=[{}, {}] B={}>'.format(self.size, self.w_min, self.w_max, self.budget)

    @classmethod
    def from_config(cls, features, config):
        """
        :type config: DisentangleConfig
        """
        return cls(features, config.w_min, config.w_max, config.budget, config.objective_variant)

    @property
    def size(self):
        return self.features.size


class DisentangleSolution:
    """
    Weights and products in solved (ascending feature) order.

    ``permutation[k]`` is the original index of the k-th solved feature. ``relaxations`` lists the
    constraint families relaxed to reach feasibility; it is empty for a regular solve.
    """

    def __init__(self, weights, products, objective, permutation, relaxations=(), iterations=0):
        self.weights = np.asarray(weights, dtype=np.float64)
        self.products = np.asarray(products, dtype=np.float64)
        self.objective = float(objective)
        self.permutation = np.asarray(permutation, dtype=np.int64)
        self.relaxations = tuple(relaxations)
        self.iterations = iterations

    def __repr__(self):
        return '<DisentangleSolution: objective={:.6g}{}>'.format(
            self.objective, ' relaxed={}'.format(','.join(self.relaxations)) if self.relaxations else '')

    @property
    def relaxed(self):
        return bool(self.relaxations)

    def weights_in_original_order(self):
        original = np.empty_like(self.weights)
        original[self.permutation] = self.weights
        return original


def _product_objective(n):
    """
    Coefficients of ``p_N - p_1 + sum_{i=2}^{N-1} (2 p_i - p_{i-1} - p_{i+1})`` on the products
    """
    c = np.zeros(n)

    if n == 1:
        return c

    c[-1] += 1.0
    c[0] -= 1.0

    for i in range(1, n - 1):
        c[i] += 2.0
        c[i - 1] -= 1.0
        c[i + 1] -= 1.0

    return c


def objective_value(products, variant='eq5'):
    """
    Objective of solved-order products

    :param variant: ``eq5`` or ``eq5star``
    :rtype: float
    """
    p = np.asarray(products, dtype=np.float64)
    n = p.size

    if variant == 'eq5':
        return float(_product_objective(n) @ p)

    if n < 2:
        return 0.0

    span = p[-1] - p[0]
    d = np.diff(p)
    return float(span - np.sum(np.abs(d - span / (n - 1))))


def _constraint_rows(f, budget, with_convexity):
    n = f.size
    rows = [f.copy()]
    rhs = [budget]

    for i in range(n - 1):
        row = np.zeros(n)
        row[i] = f[i]
        row[i + 1] = -f[i + 1]
        rows.append(row)
        rhs.append(0.0)

    if with_convexity:
        for i in range(1, n - 1):
            row = np.zeros(n)
            row[i] = 2.0 * f[i]
            row[i - 1] = -f[i - 1]
            row[i + 1] = -f[i + 1]
            rows.append(row)
            rhs.append(0.0)

    return np.array(rows), np.array(rhs)


def _star_extension(f, a_ub, b_ub):
    """
    Adds one auxiliary variable per neighbour distance bounding ``|d_i - L / (N - 1)|``
    """
    n = f.size
    m = n - 1
    base = np.hstack([a_ub, np.zeros((a_ub.shape[0], m))])
    rows = [base]
    rhs = [b_ub]

    for i in range(m):
        deviation = np.zeros(n)
        deviation[i + 1] += f[i + 1]
        deviation[i] -= f[i]
        deviation[-1] -= f[-1] / m
        deviation[0] += f[0] / m
        aux = np.zeros(m)
        aux[i] = -1.0
        rows.append(np.concatenate([deviation, aux])[None, :])
        rows.append(np.concatenate([-deviation, aux])[None, :])
        rhs.extend([[0.0], [0.0]])

    c = np.zeros(n + m)
    c[-1 - m] += f[-1]
    c[0] -= f[0]
    c[n:] = -1.0
    return c, np.vstack(rows), np.concatenate([np.atleast_1d(r) for r in rhs])


def _run_linprog(c_max, a_ub, b_ub, bounds):
    result = linprog(-c_max, A_ub=a_ub, b_ub=b_ub, bounds=bounds, method='highs')

    if result.status == 2:
        return None

    if result.status != 0:
        raise SolverError('linear program failed: {}'.format(result.message), getattr(result, 'nit', 0))

    return result


def _solve_sorted(f, problem, with_convexity, budget):
    n = f.size
    a_ub, b_ub = _constraint_rows(f, budget, with_convexity)

    if problem.objective_variant == 'eq5star' and n >= 2:
        c_max, a_ub, b_ub = _star_extension(f, a_ub, b_ub)
        bounds = [(problem.w_min, problem.w_max)] * n + [(0.0, None)] * (n - 1)
    else:
        c_max = _product_objective(n) * f
        bounds = [(problem.w_min, problem.w_max)] * n

    first = _run_linprog(c_max, a_ub, b_ub, bounds)

    if first is None:
        return None

    best = float(c_max @ first.x)

    tie_c = np.zeros(c_max.size)
    tie_c[:n] = 1.0
    tie_a = np.vstack([a_ub, -c_max[None, :]])
    tie_b = np.append(b_ub, -(best - _TIE_BREAK_SLACK))
    second = _run_linprog(tie_c, tie_a, tie_b, bounds)

    chosen = second if second is not None else first
    iterations = first.nit + (second.nit if second is not None else 0)
    return np.clip(chosen.x[:n], problem.w_min, problem.w_max), iterations


def solve_disentangle(problem, tol=1e-9):
    """
    Solves the disentanglement linear program for one feature vector.

    Features are sorted ascending, the program is solved in that order and the permutation is kept
    for mapping back. Among optimal weight vectors the one with the largest sum is returned.

    When the constraints admit no solution the budget is raised to ``sum(w_min * F)``; if that does not
    suffice the convexity family is dropped. Both relaxations are recorded on the solution.

    :type problem: DisentangleProblem
    :param tol: Feasibility tolerance of the returned products
    :rtype: DisentangleSolution
    :exception SolverError: the solver did not converge
    """
    if not np.all(np.isfinite(problem.features)):
        raise ConfigError('disentangle features must be finite')
    if tol <= 0:
        raise ConfigError('tol must be positive')

    permutation = np.argsort(problem.features, kind='stable')
    f = problem.features[permutation]
    relaxations = []
    budget = problem.budget

    solved = _solve_sorted(f, problem, True, budget)

    if solved is None:
        budget = max(budget, float(np.sum(problem.w_min * f)) + tol)
        relaxations.append('budget')
        logger.warning('disentangle problem infeasible, budget relaxed to %.6g', budget)
        solved = _solve_sorted(f, problem, True, budget)

    if solved is None:
        relaxations.append('convexity')
        logger.warning('disentangle problem still infeasible, convexity constraints dropped')
        solved = _solve_sorted(f, problem, False, budget)

    if solved is None:
        raise SolverError('disentangle problem infeasible after relaxation', 0)

    weights, iterations = solved
    products = weights * f
    return DisentangleSolution(weights, products, objective_value(products, problem.objective_variant),
                               permutation, relaxations, iterations)


def disentangled_edge(problem, solution):
    """
    :return: ``w * F`` in original feature order
    :rtype: numpy.ndarray
    """
    return solution.weights_in_original_order() * problem.features


def check_constraints(problem, solution, tol=1e-9):
    """
    Verifies every constraint family on the solved-order products, independently of the solver.

    :return: Human-readable violations, empty when the solution is valid
    :rtype: list of str
    """
    violations = []
    f = [float(problem.features[k]) for k in solution.permutation]
    w = [float(x) for x in solution.weights]
    p = [w[i] * f[i] for i in range(len(f))]
    budget = problem.budget

    if 'budget' in solution.relaxations:
        budget = max(budget, sum(problem.w_min * x for x in f) + tol)

    for i in range(1, len(f)):
        if f[i - 1] > f[i]:
            violations.append('permutation does not sort features at {}'.format(i))

    for i, weight in enumerate(w):
        if weight < problem.w_min - tol or weight > problem.w_max + tol:
            violations.append('w[{}]={} outside [{}, {}]'.format(i, weight, problem.w_min, problem.w_max))

    if sum(p) > budget + tol:
        violations.append('budget exceeded: {} > {}'.format(sum(p), budget))

    for i in range(len(p) - 1):
        if p[i] > p[i + 1] + tol:
            violations.append('order broken at {}: {} > {}'.format(i, p[i], p[i + 1]))

    if 'convexity' not in solution.relaxations:
        for i in range(1, len(p) - 1):
            if 2 * p[i] > p[i - 1] + p[i + 1] + tol:
                violations.append('convexity broken at {}'.format(i))

    if sorted(int(k) for k in solution.permutation) != list(range(len(f))):
        violations.append('permutation is not a bijection')

    return violations


class Disentangler:
    """
    Solves problems for a stream of feature vectors, memoizing by the vector quantized to ``memo_quantum``.

    A cache miss solves the vector itself. A hit is only reused when the cached weights satisfy every
    constraint on the caller's own features, otherwise the vector is solved afresh. Reads are
    lock-free; inserts are serialized.
    """

    def __init__(self, config):
        """
        :type config: DisentangleConfig
        """
        self.config = config
        self._cache = {}
        self._lock = threading.Lock()
        self.relaxed_count = 0
        self.resolved_count = 0

    def __repr__(self):
        return '<Disentangler: {} cached>'.format(len(self._cache))

    def _key(self, features):
        return tuple(np.round(features / self.config.memo_quantum).astype(np.int64).tolist())

    def _solve_fresh(self, problem):
        solution = solve_disentangle(problem, self.config.lp_tolerance)

        if solution.relaxed:
            self.relaxed_count += 1

        return solution

    def solve(self, features):
        """
        :rtype: (DisentangleProblem, DisentangleSolution)
        """
        problem = DisentangleProblem.from_config(features, self.config)
        key = self._key(problem.features)
        solution = self._cache.get(key)

        if solution is None:
            solution = self._solve_fresh(problem)

            with self._lock:
                self._cache.setdefault(key, solution)

        elif check_constraints(problem, solution, self.config.lp_tolerance):
            logger.debug('cached weights violate the constraints of %s, solving again', problem.features)
            self.resolved_count += 1
            solution = self._solve_fresh(problem)

        return problem, solution

    def transform(self, matrix):
        """
        :param matrix: Normalized features, one row per event
        :return: Disentangled features ``h``, same shape
        :rtype: numpy.ndarray
        """
        matrix = np.asarray(matrix, dtype=np.float64)
        out = np.empty_like(matrix)

        for i, row in enumerate(matrix):
            problem, solution = self.solve(row)
            out[i] = disentangled_edge(problem, solution)

        logger.info('disentangled %d edges (%d distinct, %d relaxed)', len(matrix), len(self._cache),
                    self.relaxed_count)
        return out


def feature_stats(matrix):
    """
    :return: Per-column mean and standard deviation
    :rtype: (numpy.ndarray, numpy.ndarray)
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    return matrix.mean(axis=0), matrix.std(axis=0)


def overlap_ratio(means, stds):
    """
    Average pairwise overlap of the feature ranges ``[mu - 3 sigma, mu + 3 sigma]``.

    Each pair scores the length of the intersection over the shorter range. A pair of zero-length
    ranges scores 1 when the points lie inside each other's range, 0 otherwise. Diagonal pairs score 1.

    :rtype: float
    """
    means = np.asarray(means, dtype=np.float64)
    stds = np.asarray(stds, dtype=np.float64)

    if np.any(stds < 0):
        raise ConfigError('standard deviations must be non-negative')

    low = means - 3.0 * stds
    high = means + 3.0 * stds

    inter_low = np.maximum(low[:, None], low[None, :])
    inter_high = np.minimum(high[:, None], high[None, :])
    overlap = np.maximum(inter_high - inter_low, 0.0)
    shorter = np.minimum((high - low)[:, None], (high - low)[None, :])
    touching = inter_high >= inter_low

    ratio = np.where(shorter > 0, overlap / np.where(shorter > 0, shorter, 1.0), touching.astype(np.float64))
    np.fill_diagonal(ratio, 1.0)
    return float(ratio.mean())


def class_overlap_ratio(matrix, labels):
    """
    :func:`overlap_ratio` of the rows of every class, averaged over the classes with at least two rows

    :param matrix: Features, one row per event
    :param labels: Class of every row
    :rtype: float
    :exception ConfigError: no class has two rows
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    labels = np.asarray(labels)
    ratios = []

    for label in np.unique(labels):
        rows = matrix[labels == label]

        if len(rows) >= 2:
            ratios.append(overlap_ratio(*feature_stats(rows)))

    if not ratios:
        raise ConfigError('overlap needs a class with at least two rows')

    return float(np.mean(ratios))
