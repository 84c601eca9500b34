"""Fixed test densities shared by the CLI and the acceptance checks.

Each density is a positive trigonometric polynomial whose top mode lies
between 9 and 13: pointwise quadratic products alias on a 32-point grid and
are fully resolved on a 128-point grid.
"""
from __future__ import annotations

import numpy as np

TAU = 2 * np.pi


def identity_suite():
    """Five named band-limited densities of one variable on ``[0, 1)``."""
    return [
        ("cos1+sin10", lambda x: 1 + 0.3 * np.cos(TAU * x) + 0.1 * np.sin(TAU * 10 * x)),
        ("mix3+9", lambda x: 1 + 0.1 * np.cos(TAU * 9 * x + 0.3) + 0.2 * np.sin(TAU * 3 * x)),
        ("mix5+12", lambda x: 1 + 0.1 * np.cos(TAU * 12 * x) + 0.3 * np.cos(TAU * 5 * x)),
        (
            "harmonic12",
            lambda x: 1 + 0.1 * sum(np.cos(TAU * k * x + k) / k for k in range(1, 13)),
        ),
        ("beat10-12", lambda x: 1 + 0.2 * np.sin(TAU * 11 * x) * np.cos(TAU * x)),
    ]
