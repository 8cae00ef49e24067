"""Closed-form eigenfrequency catalogs for the square benchmark domain.

Simply supported bending plate on the unit square: omega proportional to
m^2 + n^2, so the spectrum normalized by the fundamental is
(m^2 + n^2) / 2. Grounded membrane (Dirichlet Laplacian): omega proportional
to sqrt(m^2 + n^2), normalized sqrt((m^2 + n^2) / 2).
"""

import numpy as np


def _mode_sums(count):
    top = int(np.ceil(np.sqrt(2 * count))) + 2
    sums = sorted((m * m + n * n) for m in range(1, top) for n in range(1, top))
    return np.array(sums[:count], dtype=float)


def square_mechanical_ratios(count):
    """First ``count`` normalized bending frequencies of the SS unit square."""
    s = _mode_sums(count)
    return s / s[0]


def square_electric_ratios(count):
    """First ``count`` normalized frequencies of the grounded unit-square membrane."""
    s = _mode_sums(count)
    return np.sqrt(s / s[0])


def catalog_for(bc_kinds, square):
    """Per-family analytic normalized spectra, or None when not covered.

    ``bc_kinds`` is the set of boundary-condition kinds applied to the
    (single) boundary group; ``square`` says whether the mesh is the
    structured unit-square benchmark domain.
    """
    if not square:
        return {"mechanical": None, "electric": None}
    return {
        "mechanical": square_mechanical_ratios
        if "simply_supported" in bc_kinds else None,
        "electric": square_electric_ratios if "grounded" in bc_kinds else None,
    }
