"""Perturbative estimates for a microwave-driven f0-g1 reset."""

from __future__ import annotations

import math
from typing import NamedTuple

from ..errors import DomainError, SingularDetuning

__all__ = ["MicrowaveResetEstimate", "microwave_reset_estimate", "emission_rate_from_coupling"]


class MicrowaveResetEstimate(NamedTuple):
    """All entries are ordinary frequencies in GHz (``x / 2pi``)."""

    g_tilde: float
    gamma: float
    fsr: float


def emission_rate_from_coupling(g_tilde: float, hopping_J: float) -> float:
    """Band-centre decay ``g^2 / J`` of a coupling into the chain (GHz, /2pi)."""
    if not hopping_J > 0:
        raise DomainError("hopping_J must be positive")
    return g_tilde**2 / hopping_J


def microwave_reset_estimate(
    hopping_J: float,
    g: float,
    eta: float,
    delta: float,
    omega_drive_amp: float,
    n_cells: int,
) -> MicrowaveResetEstimate:
    """Effective f0-g1 coupling, its emission rate and the chain mode spacing.

    Parameters
    ----------
    hopping_J, g, eta, delta, omega_drive_amp : float
        Hopping, qubit-chain coupling, anharmonicity, qubit-chain detuning and
        drive amplitude, all in GHz.
    n_cells : int
        Number of chain cells.
    """
    if not hopping_J > 0:
        raise DomainError("hopping_J must be positive")
    if n_cells < 2:
        raise DomainError("need at least two cells")
    if delta == 0 or delta + eta == 0:
        raise SingularDetuning("delta must avoid 0 and -eta")
    g_tilde = eta * omega_drive_amp * g / (math.sqrt(2.0) * delta * (delta + eta))
    return MicrowaveResetEstimate(g_tilde, emission_rate_from_coupling(g_tilde, hopping_J),
                                  4.0 * hopping_J / n_cells)
