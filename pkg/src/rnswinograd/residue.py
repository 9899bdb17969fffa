"""Symmetric-range modular arithmetic and residue number systems.

Everything in this module is exact integer arithmetic.  Residues are kept in
the symmetric range [-(m-1)/2, (m-1)/2] for an odd modulus m, so signed values
survive encode/decode without a separate sign channel.  Reconstruction uses
mixed radix conversion, which only ever needs arithmetic modulo the individual
moduli plus one final weighted sum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import NotCoprime, OutOfRange, SystemMismatch

# Residues must fit a signed 16-bit word, so moduli are capped at 15 bits.
MAX_MODULUS = (1 << 15) - 1


def check_modulus(m: int) -> int:
    """Validate that m is usable as a modulus here: odd, >= 3, <= 15 bits."""
    if not isinstance(m, (int, np.integer)):
        raise TypeError(f"modulus must be an integer, got {type(m).__name__}")
    if m < 3 or m % 2 == 0 or m > MAX_MODULUS:
        raise ValueError(f"modulus must be odd and in [3, {MAX_MODULUS}], got {m}")
    return int(m)


def mod_reduce(x: int, m: int) -> int:
    """Reduce x modulo m into the symmetric range [-(m-1)/2, (m-1)/2]."""
    check_modulus(m)
    r = x % m
    if r > (m - 1) // 2:
        r -= m
    return r


def mod_inverse(x: int, m: int) -> int:
    """Multiplicative inverse of x modulo m, in symmetric range.

    Uses the extended Euclidean algorithm (via pow), so m does not need to
    be prime, only coprime to x.
    """
    check_modulus(m)
    try:
        inv = pow(x, -1, m)
    except ValueError:
        raise NotCoprime(f"{x} is not invertible modulo {m}") from None
    return mod_reduce(inv, m)


class RnsSystem:
    """A fixed set of pairwise-coprime odd moduli.

    Precomputes the inverses needed for mixed radix reconstruction.  Instances
    are immutable after construction and safe to share across threads.
    """

    def __init__(self, moduli: Sequence[int]):
        moduli = tuple(check_modulus(m) for m in moduli)
        if not moduli:
            raise ValueError("an RNS system needs at least one modulus")
        for i in range(len(moduli)):
            for j in range(i + 1, len(moduli)):
                g = math.gcd(moduli[i], moduli[j])
                if g != 1:
                    raise NotCoprime(
                        f"moduli {moduli[i]} and {moduli[j]} share factor {g}"
                    )
        self.moduli = moduli
        self.dynamic_range = math.prod(moduli)
        self.signed_bound = (self.dynamic_range - 1) // 2
        # _mrc_inv[j][i] = moduli[i]^-1 mod moduli[j], for i < j
        self._mrc_inv = [
            [mod_inverse(moduli[i], moduli[j]) for i in range(j)]
            for j in range(len(moduli))
        ]

    def __len__(self) -> int:
        return len(self.moduli)

    def __eq__(self, other) -> bool:
        return isinstance(other, RnsSystem) and self.moduli == other.moduli

    def __hash__(self) -> int:
        return hash(self.moduli)

    def __repr__(self) -> str:
        return f"RnsSystem{self.moduli}"

    def to_rns(self, x: int) -> "RnsVector":
        """Encode a signed integer as one residue per modulus."""
        if abs(x) > self.signed_bound:
            raise OutOfRange(
                f"{x} outside representable range +/-{self.signed_bound}"
            )
        return RnsVector(tuple(mod_reduce(x, m) for m in self.moduli), self)

    def reconstruct(self, residues) -> int:
        """Mixed radix conversion of a residue vector back to a signed integer.

        Accepts an RnsVector or a plain sequence of residues (one per
        modulus, any congruent representatives).
        """
        if isinstance(residues, RnsVector):
            if residues.system != self:
                raise SystemMismatch(
                    f"vector belongs to {residues.system}, not {self}"
                )
            values = residues.values
        else:
            values = tuple(residues)
        if len(values) != len(self.moduli):
            raise SystemMismatch(
                f"expected {len(self.moduli)} residues, got {len(values)}"
            )
        digits = []
        for j, m in enumerate(self.moduli):
            t = values[j] % m
            for i in range(j):
                t = (t - digits[i]) * self._mrc_inv[j][i] % m
            digits.append(t)
        x = digits[-1]
        for j in range(len(digits) - 2, -1, -1):
            x = digits[j] + self.moduli[j] * x
        if x > self.signed_bound:
            x -= self.dynamic_range
        return x


@dataclass(frozen=True)
class RnsVector:
    """Residues of one signed integer, tied to the system that produced them."""

    values: tuple[int, ...]
    system: RnsSystem

    def __post_init__(self):
        assert all(
            abs(v) <= (m - 1) // 2
            for v, m in zip(self.values, self.system.moduli)
        ), "residue outside symmetric range"

    def _binop(self, other, op) -> "RnsVector":
        if not isinstance(other, RnsVector):
            return NotImplemented
        if other.system != self.system:
            raise SystemMismatch(
                f"cannot combine vectors from {self.system} and {other.system}"
            )
        vals = tuple(
            mod_reduce(op(a, b), m)
            for a, b, m in zip(self.values, other.values, self.system.moduli)
        )
        return RnsVector(vals, self.system)

    def __add__(self, other):
        return self._binop(other, lambda a, b: a + b)

    def __sub__(self, other):
        return self._binop(other, lambda a, b: a - b)

    def __mul__(self, other):
        return self._binop(other, lambda a, b: a * b)

    def __neg__(self) -> "RnsVector":
        vals = tuple(
            mod_reduce(-a, m) for a, m in zip(self.values, self.system.moduli)
        )
        return RnsVector(vals, self.system)

    def __int__(self) -> int:
        return self.system.reconstruct(self)


def mrc_reconstruct_arrays(
    residues: Sequence[np.ndarray], system: RnsSystem
) -> np.ndarray:
    """Vectorized mixed radix conversion.

    residues holds one integer array per modulus (matching shapes, residues of
    the same tensor).  Returns an int64 array of the reconstructed signed
    integers.  The dynamic range must fit int64 with room for one digit-times-
    radix product, which every supported system satisfies by a wide margin.
    """
    if len(residues) != len(system.moduli):
        raise SystemMismatch(
            f"expected {len(system.moduli)} residue arrays, got {len(residues)}"
        )
    assert system.dynamic_range < (1 << 62)
    digits = []
    for j, m in enumerate(system.moduli):
        t = residues[j].astype(np.int64) % m
        for i in range(j):
            t = (t - digits[i]) * system._mrc_inv[j][i] % m
        digits.append(t)
    x = digits[-1].copy()
    for j in range(len(digits) - 2, -1, -1):
        x *= system.moduli[j]
        x += digits[j]
    x[x > system.signed_bound] -= system.dynamic_range
    return x
