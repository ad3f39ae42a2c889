"""Combinatorial data of an interval exchange: permutations, singularities, H(pi)."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from itertools import permutations as _itperms

import numpy as np

from . import intlinalg
from .errors import ConsistencyError, InputError, ReducibleError

SVD_TOL = 1e-10


@dataclass(frozen=True)
class Permutation:
    """A pair of orderings of ``alphabet``: the top and bottom rows.

    Vectors and matrices attached to a permutation are indexed in alphabet
    order, which survives Rauzy moves unchanged.
    """

    alphabet: tuple
    top: tuple
    bottom: tuple

    def __post_init__(self):
        a = set(self.alphabet)
        if len(a) != len(self.alphabet):
            raise InputError("alphabet symbols must be distinct")
        if len(self.alphabet) < 2:
            raise InputError("need at least two symbols")
        if set(self.top) != a or set(self.bottom) != a or len(self.top) != len(a) or len(self.bottom) != len(a):
            raise InputError("top and bottom rows must each list every symbol once")

    @classmethod
    def parse(cls, text: str, alphabet=None) -> Permutation:
        """Parse ``"a b c / c b a"``; the alphabet defaults to top-row order."""
        if text.count("/") != 1:
            raise InputError(f"expected 'top / bottom', got {text!r}")
        t, b = (tuple(part.split()) for part in text.split("/"))
        return cls(tuple(alphabet) if alphabet is not None else t, t, b)

    @classmethod
    def reversal(cls, d: int) -> Permutation:
        """pi_d(j) = d + 1 - j on the alphabet 1..d."""
        letters = tuple(str(i) for i in range(1, d + 1))
        return cls(letters, letters, letters[::-1])

    def __str__(self):
        return " ".join(self.top) + " / " + " ".join(self.bottom)

    @property
    def d(self) -> int:
        return len(self.alphabet)

    @cached_property
    def index(self) -> dict:
        return {s: i for i, s in enumerate(self.alphabet)}

    @cached_property
    def top_idx(self) -> tuple:
        """Alphabet indices in top-row order."""
        return tuple(self.index[s] for s in self.top)

    @cached_property
    def bottom_idx(self) -> tuple:
        return tuple(self.index[s] for s in self.bottom)

    @cached_property
    def top_pos(self) -> tuple:
        """pi_t as a tuple over alphabet indices, values in 1..d."""
        pos = [0] * self.d
        for k, i in enumerate(self.top_idx):
            pos[i] = k + 1
        return tuple(pos)

    @cached_property
    def bottom_pos(self) -> tuple:
        pos = [0] * self.d
        for k, i in enumerate(self.bottom_idx):
            pos[i] = k + 1
        return tuple(pos)

    @cached_property
    def monodromy(self) -> tuple:
        """pi_b o pi_t^{-1} as the tuple (m(1), ..., m(d))."""
        return tuple(self.bottom_pos[i] for i in self.top_idx)

    def relabel(self, alphabet) -> Permutation:
        return Permutation(tuple(alphabet), self.top, self.bottom)

    def require_irreducible(self):
        if not is_irreducible(self):
            raise ReducibleError(f"permutation {self} is reducible")


def is_irreducible(p: Permutation) -> bool:
    seen_t, seen_b = set(), set()
    for k in range(p.d - 1):
        seen_t.add(p.top[k])
        seen_b.add(p.bottom[k])
        if seen_t == seen_b:
            return False
    return True


def is_rotation(p: Permutation) -> bool:
    m, d = p.monodromy, p.d
    return all((m[i + 1] - m[i] - 1) % d == 0 for i in range(d - 1))


def irreducible_permutations(d: int):
    """Every irreducible permutation with top row 1..d (one per monodromy)."""
    letters = tuple(str(i) for i in range(1, d + 1))
    for bottom in _itperms(letters):
        p = Permutation(letters, letters, bottom)
        if is_irreducible(p):
            yield p


@dataclass(frozen=True)
class SingularityProfile:
    sigma: tuple
    orbits: tuple
    b_vectors: dict
    genus: int

    @property
    def n_singularities(self) -> int:
        return len(self.orbits)

    @property
    def orders(self) -> tuple:
        """Order k_s of each singularity (cone angle 2 pi (k_s + 1)); they sum to 2g - 2.

        The endpoints 0 and d of the interval sit on the boundary of the
        rectangles and are not counted towards the angle.
        """
        d = len(self.sigma) - 1
        return tuple(len(s) - (0 in s) - (d in s) - 1 for s in self.orbits)


def _sigma(p: Permutation) -> tuple:
    d, m = p.d, p.monodromy
    minv = [0] * (d + 1)
    for i, v in enumerate(m, start=1):
        minv[v] = i
    sigma = [0] * (d + 1)
    for i in range(d + 1):
        if i == 0:
            sigma[i] = minv[1] - 1
        elif i == minv[d]:
            sigma[i] = d
        else:
            sigma[i] = minv[m[i - 1] + 1] - 1
    return tuple(sigma)


def singularity_profile(p: Permutation) -> SingularityProfile:
    p.require_irreducible()
    sigma = _sigma(p)
    d = p.d
    seen, orbits = set(), []
    for start in range(d + 1):
        if start in seen:
            continue
        orbit, i = [], start
        while i not in seen:
            seen.add(i)
            orbit.append(i)
            i = sigma[i]
        orbits.append(frozenset(orbit))
    orbits.sort(key=min)
    b_vectors = {}
    for s in orbits:
        # b^s_i is indexed by top position i; store it in alphabet order
        vec = [0] * d
        for i in range(1, d + 1):
            vec[p.top_idx[i - 1]] = int(i - 1 in s) - int(i in s)
        b_vectors[s] = tuple(vec)
    twice_genus = d + 1 - len(orbits)
    if twice_genus % 2:
        raise ConsistencyError(f"odd value d+1-#Sigma = {twice_genus} for {p}")
    return SingularityProfile(sigma, tuple(orbits), b_vectors, twice_genus // 2)


def genus(p: Permutation) -> int:
    return singularity_profile(p).genus


@dataclass(frozen=True)
class OneVectorRule:
    values: dict
    ones_in_H: bool


def check_one_vector_rule(p: Permutation) -> OneVectorRule:
    """Dot products (1,...,1).b^s, checked against the three-case rule."""
    prof = singularity_profile(p)
    d = p.d
    values = {}
    for s, b in prof.b_vectors.items():
        v = sum(b)
        expected = 1 if (0 in s and d not in s) else -1 if (d in s and 0 not in s) else 0
        if v != expected:
            raise ConsistencyError(f"(1..1).b^s = {v}, expected {expected} for s={sorted(s)}")
        values[s] = v
    return OneVectorRule(values, all(v == 0 for v in values.values()))


@dataclass(frozen=True, eq=False)
class TranslationStructure:
    omega_t: np.ndarray
    omega_b: np.ndarray
    omega: np.ndarray
    h_basis: np.ndarray

    @property
    def rank(self) -> int:
        return self.h_basis.shape[1]

    def projector(self) -> np.ndarray:
        return self.h_basis @ self.h_basis.T


def _omega_star(pos) -> np.ndarray:
    d = len(pos)
    return np.array([[int(pos[b] < pos[a]) for b in range(d)] for a in range(d)], dtype=np.int64)


def omega_maps(p: Permutation) -> TranslationStructure:
    p.require_irreducible()
    om_t = _omega_star(p.top_pos)
    om_b = _omega_star(p.bottom_pos)
    om = om_b - om_t
    u, s, _ = np.linalg.svd(om.astype(float))
    rank = int(np.sum(s > SVD_TOL))
    return TranslationStructure(om_t, om_b, om, u[:, :rank].copy())


def omega_matrix(p: Permutation) -> list[list[int]]:
    """Omega_pi as exact integers, alphabet order."""
    d = p.d
    tp, bp = p.top_pos, p.bottom_pos
    return [[int(bp[b] < bp[a]) - int(tp[b] < tp[a]) for b in range(d)] for a in range(d)]


def h_lattice_basis(p: Permutation) -> list[list[int]]:
    """Integer basis (columns) of H(pi) intersected with Z^d."""
    prof = singularity_profile(p)
    basis, _, _ = intlinalg.kernel_lattice(list(prof.b_vectors.values()), p.d)
    return basis


def in_H(p: Permutation, h, tol: float = 0.0) -> bool:
    """Membership test h . b^s = 0 for every singularity s (exact when tol == 0)."""
    prof = singularity_profile(p)
    for b in prof.b_vectors.values():
        dot = sum(x * y for x, y in zip(b, h))
        if (tol == 0 and dot != 0) or (tol and abs(float(dot)) > tol):
            return False
    return True
