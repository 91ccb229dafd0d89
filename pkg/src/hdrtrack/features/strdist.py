"""String distances used to merge misspelled header names."""

from __future__ import annotations


def damerau_levenshtein(a: str, b: str) -> int:
    """Unrestricted Damerau-Levenshtein distance (Lowrance-Wagner).

    Unlike the optimal-string-alignment variant, a substring may be edited
    after being transposed, so the result is a true metric.

    >>> damerau_levenshtein("ca", "abc")
    2
    >>> damerau_levenshtein("content-lenght", "content-length")
    1
    """
    la, lb = len(a), len(b)
    if la == 0:
        return lb
    if lb == 0:
        return la
    inf = la + lb
    # rows/cols shifted by one to hold the sentinel
    d = [[inf] * (lb + 2) for _ in range(la + 2)]
    for i in range(la + 1):
        d[i + 1][1] = i
    for j in range(lb + 1):
        d[1][j + 1] = j
    last_row: dict[str, int] = {}
    for i in range(1, la + 1):
        ca = a[i - 1]
        last_match_col = 0
        for j in range(1, lb + 1):
            cb = b[j - 1]
            k = last_row.get(cb, 0)
            l = last_match_col
            if ca == cb:
                cost = 0
                last_match_col = j
            else:
                cost = 1
            d[i + 1][j + 1] = min(
                d[i][j] + cost,
                d[i + 1][j] + 1,
                d[i][j + 1] + 1,
                d[k][l] + (i - k - 1) + 1 + (j - l - 1),
            )
        last_row[ca] = i
    return d[la + 1][lb + 1]


def normalized_damerau_levenshtein(a: str, b: str) -> float:
    longest = max(len(a), len(b))
    if longest == 0:
        return 0.0
    return damerau_levenshtein(a, b) / longest


def hamming_similarity(a: str, b: str) -> float:
    """1 - normalized Hamming distance; 0 for strings of unequal length."""
    if len(a) != len(b):
        return 0.0
    if not a:
        return 1.0
    return 1.0 - sum(x != y for x, y in zip(a, b)) / len(a)


def name_similarity(a: str, b: str, w_dl: float = 0.7, w_h: float = 0.3) -> float:
    return w_dl * (1.0 - normalized_damerau_levenshtein(a, b)) + w_h * hamming_similarity(a, b)


def jaccard(x: set, y: set) -> float:
    if not x and not y:
        return 1.0
    return len(x & y) / len(x | y)
