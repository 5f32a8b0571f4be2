"""Binary L x D mask families applied inside the context-vector sum.

Row t of a mask picks which feature columns token t contributes to the shared
context vector, which is what gives the otherwise position-blind summary its
positional structure. Conventions for non-square masks (indices 1-based, as
in the constructions below; arrays are 0-based):

- lower_triangular: M[t][n] = 1 iff n <= t. Rows t >= D are all ones.
- banded: a width-``bandwidth`` band trailing the rescaled diagonal
  d(t) = ceil(t * D / L), i.e. M[t][n] = 1 iff 0 <= d(t) - n < bandwidth.
  At L == D this is exactly the band 0 <= t - n < bandwidth.
- block_diagonal: rows split into floor(min(L, D)/2) contiguous groups of
  ``block_rows`` rows (default ceil(L / n_groups)); group g maps to columns
  {2g-1, 2g}. Trailing rows clamp into the last group.
- none: all ones.

Every family keeps every row nonzero, so no token is ever fully muted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

KINDS = ("lower_triangular", "banded", "block_diagonal", "none")


@dataclass(frozen=True)
class Mask:
    kind: str
    L: int
    D: int
    matrix: np.ndarray  # (L, D), entries in {0.0, 1.0}
    bandwidth: int | None = None
    block_rows: int | None = None


def _check_dims(kind: str, L: int, D: int) -> None:
    if L < 1 or D < 1:
        raise ConfigError(f"mask extents must be positive, got L={L}, D={D}")
    if kind in ("banded", "block_diagonal") and min(L, D) < 2:
        raise ConfigError(f"{kind} mask needs min(L, D) >= 2, got min({L}, {D})")


def lower_triangular_mask(L: int, D: int) -> Mask:
    _check_dims("lower_triangular", L, D)
    cols = np.arange(1, D + 1)
    rows = np.arange(1, L + 1)
    m = (cols[None, :] <= rows[:, None]).astype(np.float64)
    return Mask("lower_triangular", L, D, m)


def banded_mask(L: int, D: int, bandwidth: int | None = None) -> Mask:
    _check_dims("banded", L, D)
    if bandwidth is None:
        bandwidth = min(L, D) // 2
    if bandwidth < 1:
        raise ConfigError(f"bandwidth must be a positive integer, got {bandwidth}")
    rows = np.arange(1, L + 1)
    diag = -(-(rows * D) // L)  # ceil(t * D / L) in exact integer arithmetic
    offs = diag[:, None] - np.arange(1, D + 1)[None, :]
    m = ((offs >= 0) & (offs < bandwidth)).astype(np.float64)
    return Mask("banded", L, D, m, bandwidth=bandwidth)


def block_diagonal_mask(L: int, D: int, block_rows: int | None = None) -> Mask:
    _check_dims("block_diagonal", L, D)
    n_groups = min(L, D) // 2
    if block_rows is None:
        block_rows = -(-L // n_groups)  # ceil
    if block_rows < 1:
        raise ConfigError(f"block_rows must be a positive integer, got {block_rows}")
    group = np.minimum(np.arange(L) // block_rows, n_groups - 1)
    m = np.zeros((L, D))
    m[np.arange(L), 2 * group] = 1.0
    m[np.arange(L), 2 * group + 1] = 1.0
    return Mask("block_diagonal", L, D, m, block_rows=block_rows)


def no_mask(L: int, D: int) -> Mask:
    _check_dims("none", L, D)
    return Mask("none", L, D, np.ones((L, D)))


def build_mask(
    kind: str,
    L: int,
    D: int,
    bandwidth: int | None = None,
    block_rows: int | None = None,
) -> Mask:
    """Construct one of the mask families by name."""
    if kind == "lower_triangular":
        return lower_triangular_mask(L, D)
    if kind == "banded":
        return banded_mask(L, D, bandwidth)
    if kind == "block_diagonal":
        return block_diagonal_mask(L, D, block_rows)
    if kind == "none":
        return no_mask(L, D)
    raise ConfigError(f"unknown mask kind {kind!r}; expected one of {KINDS}")
