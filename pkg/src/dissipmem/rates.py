"""Jump-rate tables and effective temperatures.

A site with ``k`` violated adjacent stabilizers is flipped by the correcting
bath at rate ``r(k)`` and by the noise bath at rate ``noise``.  For the
coordination-4 models (2D Ising spins, 4D toric-code faces)::

    r = [0, 0, kappa, kappa_tilde, kappa]

with ``kappa_tilde = sqrt(noise * kappa + noise**2) - noise`` for the
detailed-balance variant and ``kappa_tilde = kappa`` for the majority rule.

The 2D toric code uses per-excited-star legs, so an edge flips at
``kappa * k + noise`` (``r = [0, kappa, 2 kappa]``).  The 1D ring
(``ising1d``, exact-oracle only) uses ``r = [0, kappa, kappa]``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .lattice import Model

BETA_C_ISING = 0.44


class Variant(str, enum.Enum):
    DETAILED_BALANCE = "detailed_balance"
    MAJORITY_RULE = "majority_rule"


class RateError(ValueError):
    pass


class InfiniteBetaError(RateError):
    """Raised when the noise rate is zero and the temperature is zero."""


def kappa_tilde(kappa: float, noise: float) -> float:
    """Rate of the three-domain-wall correction that enforces detailed balance."""
    if kappa < 0 or noise < 0:
        raise RateError(f"rates must be non-negative (kappa={kappa}, noise={noise})")
    if noise == 0:
        return 0.0
    return math.sqrt(noise * kappa + noise * noise) - noise


def inverse_temperature(model, kappa: float, noise: float) -> float:
    model = Model(model)
    if kappa <= 0 or noise < 0:
        raise RateError(f"need kappa > 0 and noise >= 0 (got {kappa}, {noise})")
    if noise == 0:
        raise InfiniteBetaError("beta is infinite at zero noise")
    if model is Model.TORIC2D:
        return 0.25 * math.log((2 * kappa + noise) / noise)
    if model is Model.ISING1D:
        return 0.25 * math.log((kappa + noise) / noise)
    return 0.125 * math.log((kappa + noise) / noise)


def critical_noise_ising(kappa: float, beta_c: float = BETA_C_ISING) -> float:
    """Bit-flip rate at which the 2D Ising bath sits at ``beta_c``."""
    if kappa <= 0:
        raise RateError("kappa must be positive")
    return kappa / math.expm1(8.0 * beta_c)


@dataclass(frozen=True)
class RateTable:
    """Per-site jump rates; build with :meth:`for_model`."""

    model: Model
    kappa: float
    noise: float
    variant: Variant
    field_rate: float
    kappa_tilde: float
    rates: tuple

    @classmethod
    def for_model(cls, model, kappa: float, noise: float,
                  variant=Variant.DETAILED_BALANCE, field_rate: float = 0.0):
        model = Model(model)
        variant = Variant(variant)
        if not kappa > 0:
            raise RateError(f"kappa must be positive, got {kappa}")
        if noise < 0 or field_rate < 0:
            raise RateError("noise and field rates must be non-negative")
        if field_rate > 0 and model not in (Model.ISING2D, Model.ISING1D):
            raise RateError("the field perturbation is only defined for Ising models")
        kt = kappa if variant is Variant.MAJORITY_RULE else kappa_tilde(kappa, noise)
        if model in (Model.ISING2D, Model.TORIC4D):
            rates = (0.0, 0.0, kappa, kt, kappa)
            if noise <= kappa and kt > kappa * (1 + 1e-12):
                raise RateError("kappa_tilde exceeds kappa")
        elif model is Model.TORIC2D:
            rates = (0.0, kappa, 2.0 * kappa)
        else:
            rates = (0.0, kappa, kappa)
        return cls(model, float(kappa), float(noise), variant, float(field_rate),
                   float(kt), tuple(float(r) for r in rates))

    @property
    def z(self) -> int:
        return len(self.rates) - 1

    def r(self, k: int) -> float:
        if not 0 <= k <= self.z:
            raise RateError(f"violated count {k} outside [0, {self.z}]")
        return self.rates[k]

    @property
    def rate_max(self) -> float:
        return max(self.rates)

    @property
    def total_rate(self) -> float:
        """Uniformized per-site event rate, including do-nothing padding."""
        return self.rate_max + self.noise + self.field_rate

    @property
    def dt(self) -> float:
        """Duration of one global step (one event per site on average)."""
        return 1.0 / self.total_rate

    @property
    def beta(self) -> float:
        return inverse_temperature(self.model, self.kappa, self.noise)

    def rate_array(self) -> np.ndarray:
        return np.array(self.rates, dtype=np.float64)


def detailed_balance_ratio(table: RateTable, k_before: int, k_after: int) -> float:
    """Forward over backward flip rate between the two sides of a single flip.

    A flip toggles all ``z`` adjacent stabilizers, so ``k_after = z - k_before``.
    For the detailed-balance variant the result equals ``exp(-beta * dE)`` with
    ``dE = 2 * (z - 2 * k_before)``.
    """
    if k_after != table.z - k_before or not 0 <= k_before <= table.z:
        raise RateError(f"({k_before}, {k_after}) is not a flip pair for z={table.z}")
    return (table.r(k_before) + table.noise) / (table.r(k_after) + table.noise)
