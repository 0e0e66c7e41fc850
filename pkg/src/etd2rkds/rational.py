"""Pade-type rational replacements for ``exp(-x)`` and its phi-functions.

Each family provides three functions of ``x >= 0``:

* ``ell = 1``: the approximant ``R(x) ~ exp(-x)``,
* ``ell = 2``: ``(1 - R(x)) / x``, approximating ``phi_1``,
* ``ell = 3``: ``(x - 1 + R(x)) / x**2``, approximating ``phi_2``,

stored in partial-fraction form ``2 Re sum_l r_l / (x - s_l)`` over the poles
``s_l`` with positive imaginary part.  A matrix function ``F(tau A)`` applied
to a vector is then a handful of complex shifted solves, or, in the eigenbasis
of ``A``, an entrywise multiplication by a real vector.

For large ``x`` the partial-fraction terms are ``O(1/x)`` while their sum is
``O(1/x**4)`` (P04, ``ell = 1``), so poles, residues and scalar evaluations are
carried in extended precision and only rounded to float64 at the end.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, Sequence, Tuple

import numpy as np
from numpy.polynomial import polynomial as npoly

from .operators import Axis, SpectralFactor


class SchemeName(str, enum.Enum):
    P02 = "p02"
    P04 = "p04"


@dataclass(frozen=True)
class PoleResiduePair:
    """Pole and residue, held as ``numpy.clongdouble``."""

    pole: complex
    residue: complex

    def __post_init__(self):
        if self.pole.imag == 0:
            raise ValueError(f"pole {self.pole} is real")


@dataclass(frozen=True)
class RationalScheme:
    """A rational family in partial-fraction form.

    ``numerators[ell]`` and ``denominator`` hold ascending polynomial
    coefficients of the direct form; they are kept for validation only.
    """

    name: SchemeName
    terms: Dict[int, Tuple[PoleResiduePair, ...]]
    numerators: Dict[int, Tuple[float, ...]]
    denominator: Tuple[float, ...]

    @property
    def poles(self) -> Tuple[complex, ...]:
        return tuple(t.pole for t in self.terms[1])

    def residues(self, ell: int) -> np.ndarray:
        return np.array([t.residue for t in self.terms[ell]], dtype=complex)

    @property
    def poles_complex(self) -> Tuple[complex, ...]:
        return tuple(complex(p) for p in self.poles)

    def eval_direct(self, ell: int, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return npoly.polyval(x, self.numerators[ell]) / npoly.polyval(x, self.denominator)

    def scaled(self, ell: int, c: complex) -> "RationalScheme":
        """Copy with the residues of function ``ell`` multiplied by ``c``."""
        terms = dict(self.terms)
        terms[ell] = tuple(PoleResiduePair(t.pole, c * t.residue) for t in self.terms[ell])
        return RationalScheme(self.name, terms, self.numerators, self.denominator)


# (1 - R)/x and (x - 1 + R)/x^2 for R = c0 / D(x) reduce to polynomial numerators
def _phi_numerators(den: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    c0 = den[0]
    n1 = np.array([c0])
    n2 = den[1:].copy()  # (D - c0)/x
    shifted = npoly.polysub(npoly.polymulx(den), den)
    shifted[0] += c0  # x D - D + c0, divisible by x^2
    n3 = shifted[2:]
    return n1, n2, n3


def _durand_kerner(coeffs: np.ndarray, tol: float = 1e-18, maxiter: int = 500) -> np.ndarray:
    """All roots of a monic polynomial (ascending coefficients)."""
    deg = len(coeffs) - 1
    z = np.clongdouble(0.4 + 0.9j) ** np.arange(deg)
    for _ in range(maxiter):
        z_old = z.copy()
        for i in range(deg):
            others = np.prod(z[i] - np.delete(z, i))
            z[i] = z[i] - npoly.polyval(z[i], coeffs) / others
        if np.max(np.abs(z - z_old)) <= tol * max(1.0, np.max(np.abs(z))):
            break
    # Newton polish on each simple root
    d_coeffs = npoly.polyder(coeffs)
    for _ in range(3):
        z = z - npoly.polyval(z, coeffs) / npoly.polyval(z, d_coeffs)
    return z


def _build(name: SchemeName, den: Sequence[float], hardcoded=None) -> RationalScheme:
    den = np.asarray(den, dtype=np.longdouble)
    nums = _phi_numerators(den)
    if hardcoded is not None:
        poles = [np.clongdouble(hardcoded[0])]
        res = {ell: [np.clongdouble(hardcoded[ell])] for ell in (1, 2, 3)}
    else:
        roots = _durand_kerner(den / den[-1])
        poles = sorted((r for r in roots if r.imag > 0), key=lambda r: r.real)
        if len(poles) != (len(den) - 1) // 2:
            raise RuntimeError(f"{name.value}: expected complex-conjugate root pairs, got {roots}")
        for s in poles:
            if abs(npoly.polyval(s, den)) > 1e-10:
                raise RuntimeError(f"{name.value}: root finder did not converge (|D(s)| too large at {s})")
        d_den = npoly.polyder(den)
        res = {
            ell: [npoly.polyval(s, nums[ell - 1]) / npoly.polyval(s, d_den) for s in poles]
            for ell in (1, 2, 3)
        }
    terms = {
        ell: tuple(PoleResiduePair(s, r) for s, r in zip(poles, res[ell]))
        for ell in (1, 2, 3)
    }
    return RationalScheme(
        name=name,
        terms=terms,
        numerators={ell: tuple(float(c) for c in nums[ell - 1]) for ell in (1, 2, 3)},
        denominator=tuple(float(c) for c in den),
    )


@lru_cache(maxsize=None)
def scheme_p02() -> RationalScheme:
    """``2/(x^2+2x+2)`` family; single pole ``-1+i``."""
    s = -1.0 + 1.0j
    return _build(SchemeName.P02, [2.0, 2.0, 1.0], hardcoded=(s, -1.0j, (1.0 - 1.0j) / 2, 0.5 + 0.0j))


@lru_cache(maxsize=None)
def scheme_p04() -> RationalScheme:
    """``24/(x^4+4x^3+12x^2+24x+24)`` family; two poles in the upper half plane."""
    return _build(SchemeName.P04, [24.0, 24.0, 12.0, 4.0, 1.0])


def get_scheme(name) -> RationalScheme:
    name = SchemeName(str(getattr(name, "value", name)).lower())
    return scheme_p02() if name is SchemeName.P02 else scheme_p04()


def eval_scalar(scheme: RationalScheme, ell: int, x):
    """``2 sum_l Re(r_l / (x - s_l))``; accepts scalars or arrays."""
    x = np.asarray(x, dtype=np.longdouble)
    out = np.zeros(x.shape, dtype=np.longdouble)
    for t in scheme.terms[ell]:
        out += (t.residue / (x - t.pole)).real
    out = (2 * out).astype(float)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class DVector:
    axis: Axis
    ell: int
    values: np.ndarray


def dvector_values(eigvals: np.ndarray, tau: float, scheme: RationalScheme, ell: int) -> np.ndarray:
    z = np.longdouble(tau) * np.asarray(eigvals, dtype=np.longdouble)
    d = np.zeros(z.shape, dtype=np.longdouble)
    for t in scheme.terms[ell]:
        d += (t.residue / (z - t.pole)).real
    return d.astype(float)


def precompute_dvectors(
    factor: SpectralFactor, tau: float, scheme: RationalScheme, axis=Axis.X, ells=(1, 2, 3)
) -> Dict[int, DVector]:
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    ax = Axis.parse(axis)
    out = {}
    for ell in ells:
        vals = dvector_values(factor.eigvals, tau, scheme, ell)
        vals.setflags(write=False)
        out[ell] = DVector(ax, ell, vals)
    return out
