"""Exact log-space combinatorics shared by every description-length term.

All values are natural logarithms (nats).
"""

from __future__ import annotations

import math
import threading
from collections import OrderedDict
from functools import lru_cache

import numpy as np
from scipy.special import gammaln

from .errors import DomainError

# ln C(n, k) reads the cumulative table up to this n (when both k and n - k are large)
EXACT_TABLE_LIMIT = 20_000

# q(m, n) is tabulated with Python integers for m up to this value
Q_INT_LIMIT = 1024

# ln p(m) <= pi * sqrt(2m/3) stays below the longdouble exponent range up to here
_Q_LONGDOUBLE_MAX_M = 16_000_000

# above this m (and for n > Q_SADDLE_MIN_N) ln q comes from a saddle-point expansion
Q_RECURRENCE_LIMIT = 20_000
Q_SADDLE_MIN_N = 16


class LogFactorialTable:
    """Cumulative table of ln m!, grown on demand.

    ``table[m] - table[m - 1] == ln m`` up to rounding of the running sum.
    """

    def __init__(self, m_max: int = 1024):
        self._lock = threading.Lock()
        self._table = np.zeros(1, dtype=np.float64)
        self.extend(m_max)

    def __len__(self):
        return len(self._table)

    @property
    def array(self) -> np.ndarray:
        return self._table

    def extend(self, m_max: int) -> np.ndarray:
        if m_max < len(self._table):
            return self._table
        with self._lock:
            if m_max >= len(self._table):
                size = max(m_max + 1, 2 * len(self._table))
                # gammaln keeps the table exact (no accumulated rounding)
                self._table = gammaln(np.arange(size, dtype=np.float64) + 1.0)
        return self._table

    def __call__(self, m):
        if np.isscalar(m):
            if m < len(self._table):
                return float(self._table[m])
            return float(self.extend(int(m))[m])
        m = np.asarray(m)
        if m.size and m.max() >= len(self._table):
            self.extend(int(m.max()))
        return self._table[m]


_LOG_FACT = LogFactorialTable(4096)


def log_factorial(m):
    """ln m! for integer ``m`` (scalar or array)."""
    return _LOG_FACT(m)


def _stirling_tail(x: float) -> float:
    # ln x! - [(x + 1/2) ln x - x + ln(2 pi)/2], valid for x >= 1000
    x2 = x * x
    return (1.0 / 12.0 - (1.0 / 360.0 - 1.0 / (1260.0 * x2)) / x2) / x


def _log_binomial_large(n: int, k: int) -> float:
    """ln C(n, k) without subtracting huge log-factorials.

    A difference of ln m! values carries their absolute rounding, which is
    large relative to a small result (1e-8 near 10**9), so the value is
    assembled from nonnegative pieces instead.
    """
    k = min(k, n - k)
    if k == 0:
        return 0.0
    if k <= 1000:
        i = np.arange(1, k + 1, dtype=np.float64)
        return math.fsum(np.log1p((n - k) / i).tolist())
    j = n - k
    main = k * math.log(n / k) - j * math.log1p(-k / n)
    return (main + 0.5 * math.log(n / (k * j)) - 0.5 * math.log(2 * math.pi)
            + _stirling_tail(n) - _stirling_tail(k) - _stirling_tail(j))


def log_binomial(n: int, k: int) -> float:
    """ln C(n, k); ``-inf`` outside the support."""
    if k < 0 or k > n or n < 0:
        return -math.inf
    if n <= EXACT_TABLE_LIMIT and min(k, n - k) > 1000:
        return _LOG_FACT(n) - _LOG_FACT(k) - _LOG_FACT(n - k)
    return _log_binomial_large(n, k)


def log_multiset(m: int, k: int) -> float:
    """ln of the multiset coefficient ((m k)) = C(m + k - 1, k).

    Number of ways to distribute ``k`` indistinguishable items over ``m``
    distinguishable bins.

    Raises
    ------
    DomainError
        If ``m == 0`` and ``k > 0``.
    """
    if m < 0 or k < 0:
        raise DomainError(f"log_multiset requires nonnegative arguments, got ({m}, {k})")
    if k == 0:
        return 0.0
    if m == 0:
        raise DomainError(f"cannot distribute {k} items over zero bins")
    return log_binomial(m + k - 1, k)


def _q_int_table(limit: int) -> list[list[int]]:
    # rows[m][n] = q(m, n) for 0 <= n <= m; n > m reads rows[m][m]
    rows = [[1]]
    for m in range(1, limit + 1):
        row = [0] * (m + 1)
        for n in range(1, m + 1):
            rest = m - n
            row[n] = row[n - 1] + rows[rest][min(n, rest)]
        rows.append(row)
    return rows


class RestrictedPartitionTable:
    """Memoized ln q(m, n): partitions of ``m`` into at most ``n`` parts.

    Below ``Q_INT_LIMIT`` the counts are exact Python integers. Above it,
    q(., n) is held as a column over m in extended precision and grown from
    the nearest cached smaller column with the recurrence
    q(m, n) = q(m, n - 1) + q(m - n, n), evaluated as strided cumulative sums.
    Past ``recurrence_limit`` a column costs O(n m) time and memory, so for
    ``n > Q_SADDLE_MIN_N`` the value comes from :func:`log_q_saddle` instead
    (absolute error below 2e-6 nats there, shrinking with m). A larger
    ``recurrence_limit`` keeps the recurrence exact further out.
    """

    def __init__(self, int_limit: int = Q_INT_LIMIT, column_budget_bytes: int = 512 * 2**20,
                 recurrence_limit: int = Q_RECURRENCE_LIMIT):
        self._lock = threading.RLock()
        self.recurrence_limit = recurrence_limit
        self.int_limit = int_limit
        self._ints = _q_int_table(int_limit)
        small = np.zeros((int_limit + 1, int_limit + 1), dtype=np.float64)
        for m, row in enumerate(self._ints):
            vals = np.array([math.log(v) if v else -math.inf for v in row])
            small[m, : m + 1] = vals
            small[m, m + 1:] = vals[m]
        small[0, :] = 0.0
        self._small = small
        self._columns: OrderedDict[int, np.ndarray] = OrderedDict()
        self._budget = column_budget_bytes

    def exact(self, m: int, n: int) -> int:
        """Exact integer q(m, n); only available for ``m <= int_limit``."""
        if m < 0 or n < 0:
            raise DomainError(f"q(m, n) needs m >= 0, n >= 0, got ({m}, {n})")
        if m > self.int_limit:
            raise DomainError(f"exact q only tabulated up to m={self.int_limit}")
        if m == 0:
            return 1
        if n == 0:
            return 0
        return self._ints[m][min(n, m)]

    def __call__(self, m: int, n: int) -> float:
        if m < 0 or n < 1:
            if m == 0 and n == 0:
                return 0.0
            raise DomainError(f"log_q needs m >= 0 and n >= 1, got ({m}, {n})")
        if m <= self.int_limit:
            return float(self._small[m, min(n, self.int_limit)])
        n = min(n, m)
        if n == 1:
            return 0.0
        if m > self.recurrence_limit and n > Q_SADDLE_MIN_N:
            return log_q_saddle(m, n)
        col = self._column(n, m + 1)
        return float(np.log(col[m]))

    def _column(self, n: int, length: int) -> np.ndarray:
        cols = self._columns
        col = cols.get(n)
        if col is not None and len(col) >= length:
            cols.move_to_end(n)
            return col
        with self._lock:
            size = max(4096, 1 << (length - 1).bit_length())
            if size > _Q_LONGDOUBLE_MAX_M:
                raise DomainError(f"log_q: m={length - 1} beyond supported range")
            start, base = 1, None
            for k, c in cols.items():
                if k <= n and len(c) >= size and k > start:
                    start, base = k, c
            if base is None:
                cur = np.ones(size, dtype=np.longdouble)
            else:
                cur = base[:size].copy()
            for k in range(start + 1, n + 1):
                pad = (-size) % k
                buf = np.concatenate([cur, np.zeros(pad, dtype=np.longdouble)]).reshape(-1, k)
                np.cumsum(buf, axis=0, out=buf)
                cur = buf.reshape(-1)[:size].copy()
            cols[n] = cur
            cols.move_to_end(n)
            used = sum(c.nbytes for c in cols.values())
            while used > self._budget and len(cols) > 1:
                _, old = cols.popitem(last=False)
                used -= old.nbytes
            return cur


_SADDLE_K: dict = {}


def _k_powers(n: int):
    v = _SADDLE_K.get(n)
    if v is None:
        k = np.arange(1, n + 1, dtype=np.float64)
        v = _SADDLE_K[n] = (k, k * k, k ** 3, k ** 4)
    return v


@lru_cache(maxsize=1 << 18)
def log_q_saddle(m: int, n: int) -> float:
    """Saddle-point value of ln q(m, n) with the Edgeworth correction.

    ``q(m, n)`` is the coefficient of ``x**m`` in ``prod_{k<=n} 1/(1 - x**k)``,
    i.e. ``exp(m t) G(e^-t)`` times the probability that a sum of independent
    scaled geometric variables hits ``m``. The saddle ``t`` sets their mean
    to ``m``; the lattice local limit theorem with the fourth-order
    correction gives the probability.
    """
    k, k2, k3, k4 = _k_powers(n)
    lm = math.log(m)
    # log-space Newton from the unrestricted saddle pi / sqrt(6 m)
    u = math.log(math.pi / math.sqrt(6.0 * m))
    for _ in range(100):
        t = math.exp(u)
        om = -np.expm1(-k * t)
        r = (1.0 - om) / om
        S = float(np.dot(k, r))
        g = math.log(S) - lm
        if abs(g) < 1e-15:
            break
        u += g * S / (t * float(np.dot(k2, r / om)))
    t = math.exp(u)
    om = -np.expm1(-k * t)
    q = 1.0 - om
    r = q / om
    c2 = float(np.dot(k2, r / om))
    c3 = float(np.dot(k3, r * (1.0 + q) / om ** 2))
    c4 = float(np.dot(k4, r * (1.0 + 4.0 * q + q * q) / om ** 3))
    lnG = -float(np.sum(np.log(om)))
    return m * t + lnG - 0.5 * math.log(2.0 * math.pi * c2) + c4 / (8.0 * c2 ** 2) - 5.0 * c3 ** 2 / (24.0 * c2 ** 3)


_LOG_Q = RestrictedPartitionTable()


def log_q(m: int, n: int) -> float:
    """ln q(m, n), the number of partitions of ``m`` into at most ``n`` parts."""
    return _LOG_Q(m, n)


def q_exact(m: int, n: int) -> int:
    return _LOG_Q.exact(m, n)
