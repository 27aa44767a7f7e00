# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled split scan. Must stay bit-identical to _split_py.scan_sorted:
same score expression, same operand order, first boundary wins ties."""

import numpy as np


def scan_sorted(double[::1] values, long long[::1] labels, Py_ssize_t n_classes):
    cdef Py_ssize_t n = values.shape[0]
    if n < 2 or values[0] == values[n - 1]:
        return 0.0, 0.0, False

    cdef long long[::1] left = np.zeros(n_classes, dtype=np.int64)
    cdef long long[::1] right = np.zeros(n_classes, dtype=np.int64)
    cdef Py_ssize_t i, c
    cdef long long sum_sq_left = 0
    cdef long long sum_sq_right = 0

    for i in range(n):
        right[labels[i]] += 1
    for c in range(n_classes):
        sum_sq_right += right[c] * right[c]

    cdef double best_score = -1.0
    cdef Py_ssize_t best = -1
    cdef double score
    for i in range(n - 1):
        c = labels[i]
        # Move element i from the right partition to the left one; the
        # squared-count sums update from (x +- 1)^2 = x^2 +- 2x + 1.
        sum_sq_left += 2 * left[c] + 1
        left[c] += 1
        sum_sq_right -= 2 * right[c] - 1
        right[c] -= 1
        if values[i + 1] != values[i]:
            score = (<double> sum_sq_left) / (<double> (i + 1)) \
                + (<double> sum_sq_right) / (<double> (n - i - 1))
            if score > best_score:
                best_score = score
                best = i

    cdef double threshold = 0.5 * (values[best] + values[best + 1])
    if threshold >= values[best + 1]:
        threshold = values[best]
    return best_score, threshold, True
