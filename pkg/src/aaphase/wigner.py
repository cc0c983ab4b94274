"""Wigner 3-j symbols and single-atom dipole matrix elements.

The 3-j symbol is evaluated with the Racah sum in exact rational arithmetic;
only the final square root is taken in floating point.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import factorial, sqrt
from numbers import Real

HalfInteger = Fraction


def half_integer(value: Real | Fraction | str) -> Fraction:
    """Coerce ``value`` to an exact half-integer.

    Raises
    ------
    ValueError
        If twice the value is not an integer.
    """
    try:
        x = Fraction(value)
    except (TypeError, ValueError, OverflowError):
        raise ValueError(f"{value!r} is not a half-integer") from None
    if (2 * x).denominator != 1:
        raise ValueError(f"{value!r} is not a half-integer")
    return x


def _check_pair(j: Fraction, m: Fraction) -> None:
    if j < 0:
        raise ValueError(f"negative angular momentum j={j}")
    if abs(m) > j:
        raise ValueError(f"|m| > j for j={j}, m={m}")
    if (j - m).denominator != 1:
        raise ValueError(f"j={j} and m={m} have different parity")


def _triangle(j1: Fraction, j2: Fraction, j3: Fraction) -> bool:
    return abs(j1 - j2) <= j3 <= j1 + j2 and (j1 + j2 + j3).denominator == 1


def wigner3j(j1, j2, j3, m1, m2, m3) -> float:
    """Wigner 3-j symbol ``(j1 j2 j3; m1 m2 m3)``.

    Arguments may be ints, floats, strings such as ``"3/2"`` or Fractions.
    Returns exactly ``0.0`` when ``m1 + m2 + m3 != 0`` or the triangle
    condition fails.
    """
    j1, j2, j3, m1, m2, m3 = (half_integer(v) for v in (j1, j2, j3, m1, m2, m3))
    for j, m in ((j1, m1), (j2, m2), (j3, m3)):
        _check_pair(j, m)
    if m1 + m2 + m3 != 0 or not _triangle(j1, j2, j3):
        return 0.0

    def fact(x: Fraction) -> int:
        return factorial(int(x))

    delta = Fraction(
        fact(j1 + j2 - j3) * fact(j1 - j2 + j3) * fact(-j1 + j2 + j3),
        fact(j1 + j2 + j3 + 1),
    )
    pre = delta
    for j, m in ((j1, m1), (j2, m2), (j3, m3)):
        pre *= fact(j + m) * fact(j - m)

    kmin = int(max(0, j2 - j3 - m1, j1 - j3 + m2))
    kmax = int(min(j1 + j2 - j3, j1 - m1, j2 + m2))
    total = Fraction(0)
    for k in range(kmin, kmax + 1):
        den = (
            factorial(k)
            * fact(j3 - j2 + k + m1)
            * fact(j3 - j1 + k - m2)
            * fact(j1 + j2 - j3 - k)
            * fact(j1 - k - m1)
            * fact(j2 - k + m2)
        )
        total += Fraction((-1) ** k, den)
    if total == 0:
        return 0.0
    sign = -1 if int(j1 - j2 - m3) % 2 else 1
    if total < 0:
        sign = -sign
    mag2 = pre * total * total
    return sign * sqrt(mag2.numerator) / sqrt(mag2.denominator)


@dataclass(frozen=True)
class AngularMomentumState:
    """Single-atom fine-structure state ``|j, m>``.

    ``orbital`` is a label only; it does not enter any matrix element.
    """

    j: Fraction
    m: Fraction
    orbital: str = ""

    def __post_init__(self):
        j, m = half_integer(self.j), half_integer(self.m)
        if j not in (Fraction(1, 2), Fraction(3, 2), Fraction(5, 2)):
            raise ValueError(f"j={j} outside {{1/2, 3/2, 5/2}}")
        _check_pair(j, m)
        object.__setattr__(self, "j", j)
        object.__setattr__(self, "m", m)

    def __str__(self) -> str:
        return f"|{self.orbital}, j={self.j}, m={self.m}>"


def dipole_element(bra: AngularMomentumState, ket: AngularMomentumState, q: int) -> float:
    """Spherical dipole component ``<j, m| d_q |j', m'>`` with unit radial factor.

    ``(-1)**(j' - 1 + m) * 3j(j', 1, j; m', q, -m)``.
    """
    if q not in (-1, 0, 1):
        raise ValueError(f"q must be -1, 0 or +1, got {q!r}")
    j, m = bra.j, bra.m
    jp, mp = ket.j, ket.m
    value = wigner3j(jp, 1, j, mp, q, -m)
    if value == 0.0:
        return 0.0
    phase = jp - 1 + m
    return -value if int(phase) % 2 else value
