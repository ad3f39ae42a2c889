"""Suspension data, zippered rectangles, special flows and the extended induction.

Heights are kept exact whenever the input is exact: sampled ``tau`` vectors
are dyadic rationals, so ``h = -Omega tau`` is exact and lies in H(pi) with
no rounding at all.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from fractions import Fraction

import gmpy2
import numpy as np

from .combinatorics import Permutation, in_H, omega_maps, omega_matrix
from .errors import CapExceededError, ConsistencyError, InputError, NotInHError
from .iet import IetMap, LengthVector, build_iet
from .rauzy import induction_step

log = logging.getLogger(__name__)

TAU_TRIES = 10**5
TAU_BITS = 30
FLOW_CAP = 10**7


class DiscontinuityError(InputError):
    """A flow line ran into a discontinuity of the base map."""


def _tau_inequalities(p: Permutation, tau) -> bool:
    top = bottom = 0
    for k in range(p.d - 1):
        top += tau[p.top_idx[k]]
        bottom += tau[p.bottom_idx[k]]
        if not (top > 0 and bottom < 0):
            return False
    return True


def heights_of(p: Permutation, tau) -> tuple:
    """h = -Omega tau."""
    om = omega_matrix(p)
    return tuple(-sum((c * t for c, t in zip(row, tau) if c), Fraction(0)) for row in om)


@dataclass(frozen=True)
class SuspensionDatum:
    """A point tau of the cone T^+(pi) and its heights h = -Omega tau."""

    permutation: Permutation
    tau: tuple
    heights: tuple

    @classmethod
    def from_tau(cls, p: Permutation, tau) -> SuspensionDatum:
        p.require_irreducible()
        tau = tuple(Fraction(t) if not isinstance(t, Fraction) else t for t in tau)
        if len(tau) != p.d:
            raise InputError(f"tau has {len(tau)} entries, expected {p.d}")
        if not _tau_inequalities(p, tau):
            raise InputError("tau violates the partial-sum inequalities of the cone")
        h = heights_of(p, tau)
        if not all(x > 0 for x in h):
            raise ConsistencyError("heights of a cone point are not positive")
        if not in_H(p, h):
            raise ConsistencyError("heights not orthogonal to the singularity vectors")
        return cls(p, tau, h)

    def area(self, lv: LengthVector):
        """Sum lambda_alpha h_alpha."""
        with lv.arithmetic.context():
            return sum((v * h for v, h in zip(lv.values, self.heights)), lv.values[0] * 0)

    def to_json(self) -> dict:
        p = self.permutation
        return {"permutation": str(p),
                "tau": {p.alphabet[i]: str(t) for i, t in enumerate(self.tau)},
                "heights": {p.alphabet[i]: str(h) for i, h in enumerate(self.heights)}}


def sample_tau(p: Permutation, seed: int, tries: int = TAU_TRIES) -> SuspensionDatum:
    """Rejection sample tau uniformly from [-1, 1]^d (dyadic grid) restricted to T^+(pi)."""
    p.require_irreducible()
    rng = np.random.default_rng(seed)
    scale = 1 << TAU_BITS
    for _ in range(tries):
        ints = rng.integers(-scale, scale + 1, size=p.d)
        tau = tuple(Fraction(int(k), scale) for k in ints)
        if _tau_inequalities(p, tau):
            return SuspensionDatum.from_tau(p, tau)
    raise CapExceededError(f"no point of the cone found in {tries} draws")


# --------------------------------------------------------------------------- rectangles


@dataclass(frozen=True)
class Rectangle:
    letter: str
    side: str  # "top" or "bottom"
    x0: object
    x1: object
    y0: object
    y1: object

    @property
    def area(self):
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    def to_json(self) -> dict:
        return {"letter": self.letter, "side": self.side,
                "x": [float(self.x0), float(self.x1)], "y": [float(self.y0), float(self.y1)]}


def zippered_rectangles(lv: LengthVector, p: Permutation, sd: SuspensionDatum) -> list[Rectangle]:
    """Top rectangles over the top partition, bottom ones hanging below the bottom partition."""
    if sd.permutation != p:
        raise InputError("suspension datum belongs to a different permutation")
    if lv.d != p.d:
        raise InputError(f"{lv.d} lengths for a permutation on {p.d} letters")
    tm = omega_maps(p)
    out = []
    with lv.arithmetic.context():
        zero = lv.values[0] * 0
        for side, om in (("top", tm.omega_t), ("bottom", tm.omega_b)):
            for a in range(p.d):
                start = sum((v for c, v in zip(om[a], lv.values) if c), zero)
                h = sd.heights[a]
                y0, y1 = (0, h) if side == "top" else (-h, 0)
                out.append(Rectangle(p.alphabet[a], side, start, start + lv.values[a], y0, y1))
    return out


def rectangles_json(rects) -> list[dict]:
    return [r.to_json() for r in rects]


# --------------------------------------------------------------------------- special flow


@dataclass(frozen=True)
class SpecialFlow:
    """Flow under the piecewise constant roof h over the i.e.t. ``base``."""

    base: IetMap
    heights: tuple

    @classmethod
    def of(cls, p: Permutation, lv: LengthVector, heights) -> SpecialFlow:
        if len(heights) != p.d:
            raise InputError(f"{len(heights)} heights for {p.d} letters")
        ar = lv.arithmetic
        hs = tuple(ar.number(h) if isinstance(h, str) else h for h in heights)
        if not all(h > 0 for h in hs):
            raise InputError("roof heights must be positive")
        return cls(build_iet(p, lv), hs)

    def roof(self, x):
        return self.heights[self.base.interval_of(x)]


@dataclass(frozen=True)
class FlowPoint:
    x: object
    s: object
    crossings: int


def _on_break(f: IetMap, x) -> bool:
    return any(x == b for b in f.breakpoints[1:])


def special_flow_evaluate(F: SpecialFlow, point, time, cap: int = FLOW_CAP) -> FlowPoint:
    """Flow (x, s) upward for ``time``; crossings of the roof are counted.

    Landing exactly on a discontinuity of the base map is an error in exact
    arithmetic; in float mode the point is nudged right by 2^(-P/2) |lambda|.
    """
    x, s = point
    f = F.base
    ar = f.lengths.arithmetic
    if time < 0:
        raise InputError("time must be nonnegative")
    if s < 0 or not s < F.roof(x):
        raise InputError(f"point ({x}, {s}) is not in the phase space")
    crossings = 0
    with ar.context():
        while True:
            room = F.roof(x) - s
            if time < room:
                return FlowPoint(x, s + time, crossings)
            time = time - room
            x, s = f(x), s * 0
            crossings += 1
            if crossings > cap:
                raise CapExceededError(f"more than {cap} roof crossings")
            if _on_break(f, x):
                if ar.exact:
                    raise DiscontinuityError(f"flow line hits the discontinuity {x}")
                nudge = gmpy2.mpfr(2) ** (-(ar.precision_bits // 2)) * f.total
                log.warning("flow line hit a discontinuity at %s; nudged by %s", x, nudge)
                x = x + nudge


def flow_return_map(F: SpecialFlow, x) -> tuple:
    """First return of the flow from (x, 0) to the base: (image point, return time)."""
    h = F.roof(x)
    return special_flow_evaluate(F, (x, h * 0), h).x, h


# --------------------------------------------------------------------------- extended induction


def extended_induction_step(lv: LengthVector, p: Permutation, h):
    """(lambda, pi, h) -> (lambda', pi', B h): induction on the base, heights follow the cocycle."""
    if len(h) != p.d:
        raise InputError(f"{len(h)} heights for {p.d} letters")
    if not all(x > 0 for x in h):
        raise InputError("heights must be positive")
    if not in_H(p, h, tol=0.0 if lv.arithmetic.exact else 1e-9 * max(abs(float(x)) for x in h)):
        raise NotInHError("heights are not in H(pi)")
    new, q, arrow = induction_step(lv, p)
    with lv.arithmetic.context():
        h2 = tuple(sum((c * x for c, x in zip(row, h) if c), h[0] * 0) for row in arrow.matrix)
    return new, q, h2


def extended_orbit(lv: LengthVector, p: Permutation, h, n_steps: int):
    """Iterate the extended induction, yielding (lambda, pi, h) after each step."""
    for _ in range(n_steps):
        lv, p, h = extended_induction_step(lv, p, h)
        yield lv, p, h

