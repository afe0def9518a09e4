"""Periodic-structure data model.

Lattices are stored as 3x3 row matrices (each row one lattice vector, in
angstrom) with det > 0. Atom positions are stored fractionally and kept
wrapped to [0, 1); Cartesian coordinates are derived. All value types are
immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .elements import element

__all__ = [
    "Lattice",
    "LatticeParams",
    "Crystal",
    "Composition",
    "wrap_to_cell",
    "wrap_half",
    "frac_to_cart",
    "min_image_displacement",
    "min_image_displacements",
    "niggli_reduce",
    "reduce_crystal",
    "lattice_params",
    "params_to_lattice",
    "normalized_length_scale",
    "normalize_lengths_by_atom_count",
    "IMAGE_OFFSETS",
]

# the 27 integer image offsets in [-1..1]^3, lexicographic order
IMAGE_OFFSETS = np.array(
    sorted(itertools.product((-1, 0, 1), repeat=3)), dtype=float
)

NIGGLI_TOL_FACTOR = 1e-5
NIGGLI_MAX_ITER = 100


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class LatticeParams:
    """Six rotation-invariant cell parameters: lengths in angstrom,
    angles in degrees."""

    a: float
    b: float
    c: float
    alpha: float
    beta: float
    gamma: float

    def __post_init__(self):
        if not all(
            math.isfinite(v)
            for v in (self.a, self.b, self.c, self.alpha, self.beta, self.gamma)
        ):
            raise ValueError("lattice parameters must be finite")
        if min(self.a, self.b, self.c) <= 0:
            raise ValueError("cell lengths must be positive")
        for ang in (self.alpha, self.beta, self.gamma):
            if not 0.0 < ang < 180.0:
                raise ValueError(f"cell angle {ang} outside (0, 180)")
        ca, cb, cg = (
            math.cos(math.radians(x)) for x in (self.alpha, self.beta, self.gamma)
        )
        # squared volume factor of the unit Gram matrix; > 0 iff the
        # angle triple admits a positive-definite cell
        g = 1.0 + 2.0 * ca * cb * cg - ca * ca - cb * cb - cg * cg
        if g <= 0.0:
            raise ValueError(
                f"angles ({self.alpha}, {self.beta}, {self.gamma}) do not "
                "define a positive-definite cell"
            )

    def as_tuple(self) -> tuple[float, float, float, float, float, float]:
        return (self.a, self.b, self.c, self.alpha, self.beta, self.gamma)


@dataclass(frozen=True)
class Lattice:
    """Right-handed periodic lattice; ``rows[i]`` is the i-th lattice
    vector in angstrom."""

    rows: np.ndarray
    inv: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=float)
        if rows.shape != (3, 3):
            raise ValueError(f"lattice must be 3x3, got {rows.shape}")
        if not np.all(np.isfinite(rows)):
            raise ValueError("lattice matrix must be finite")
        det = float(np.linalg.det(rows))
        if det <= 0.0:
            raise ValueError(
                f"lattice must be right-handed with positive volume (det={det:g})"
            )
        object.__setattr__(self, "rows", _readonly(rows))
        object.__setattr__(self, "inv", _readonly(np.linalg.inv(rows)))

    @classmethod
    def cubic(cls, a: float) -> "Lattice":
        return cls(np.eye(3) * a)

    @classmethod
    def from_params(cls, params: LatticeParams) -> "Lattice":
        return params_to_lattice(params)

    @property
    def volume(self) -> float:
        return float(np.linalg.det(self.rows))

    @property
    def lengths(self) -> np.ndarray:
        return np.linalg.norm(self.rows, axis=1)

    def params(self) -> LatticeParams:
        return lattice_params(self)

    def __eq__(self, other):
        return isinstance(other, Lattice) and np.array_equal(self.rows, other.rows)

    def __hash__(self):
        return hash(self.rows.tobytes())


def wrap_to_cell(frac_coords: np.ndarray) -> np.ndarray:
    """Wrap fractional coordinates componentwise into [0, 1)."""
    f = np.asarray(frac_coords, dtype=float)
    if not np.all(np.isfinite(f)):
        raise ValueError("fractional coordinates must be finite")
    w = f - np.floor(f)
    # x - floor(x) can round up to exactly 1.0 for tiny negative x
    return np.where(w >= 1.0, w - 1.0, w)


def wrap_half(frac_delta: np.ndarray) -> np.ndarray:
    """Wrap fractional differences componentwise into [-0.5, 0.5)."""
    d = np.asarray(frac_delta, dtype=float)
    w = d - np.floor(d + 0.5)
    return np.where(w >= 0.5, w - 1.0, w)


@dataclass(frozen=True)
class Composition:
    """Fraction of each atomic number present; fractions sum to 1."""

    fractions: dict[int, float]

    def __post_init__(self):
        if not self.fractions:
            raise ValueError("composition must contain at least one element")
        for z, f in self.fractions.items():
            if not (isinstance(z, (int, np.integer)) and 1 <= z <= 118):
                raise ValueError(f"invalid atomic number {z}")
            if not 0.0 < f <= 1.0:
                raise ValueError(f"fraction for Z={z} must be in (0, 1], got {f}")
        total = sum(self.fractions.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"fractions must sum to 1, got {total!r}")
        object.__setattr__(
            self, "fractions", {int(z): float(f) for z, f in sorted(self.fractions.items())}
        )

    @classmethod
    def from_types(cls, types) -> "Composition":
        types = np.asarray(types, dtype=int)
        z, counts = np.unique(types, return_counts=True)
        n = counts.sum()
        return cls({int(zi): ci / n for zi, ci in zip(z, counts)})

    @property
    def species(self) -> np.ndarray:
        return np.array(sorted(self.fractions), dtype=int)

    @property
    def weights(self) -> np.ndarray:
        return np.array([self.fractions[z] for z in sorted(self.fractions)])

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw n atom types i.i.d. from the composition."""
        return rng.choice(self.species, size=n, p=self.weights)


@dataclass(frozen=True)
class Crystal:
    """One periodic structure: atom types (atomic numbers), fractional
    coordinates, and the lattice. Coordinates are wrapped to [0, 1) on
    construction."""

    types: np.ndarray
    frac_coords: np.ndarray
    lattice: Lattice

    def __post_init__(self):
        types = np.asarray(self.types, dtype=int)
        if types.ndim != 1 or types.size < 1:
            raise ValueError("need at least one atom")
        if np.any(types < 1) or np.any(types > 118):
            raise ValueError("atomic numbers must lie in 1..118")
        coords = wrap_to_cell(np.asarray(self.frac_coords, dtype=float))
        if coords.shape != (types.size, 3):
            raise ValueError(
                f"coords shape {coords.shape} does not match {types.size} atoms"
            )
        types = types.copy()
        types.flags.writeable = False
        object.__setattr__(self, "types", types)
        object.__setattr__(self, "frac_coords", _readonly(coords))

    @property
    def n_atoms(self) -> int:
        return int(self.types.size)

    @property
    def volume(self) -> float:
        return self.lattice.volume

    def cart_coords(self) -> np.ndarray:
        return self.frac_coords @ self.lattice.rows

    def composition(self) -> Composition:
        return Composition.from_types(self.types)

    def masses(self) -> np.ndarray:
        return np.array([element(int(z)).mass for z in self.types])

    def replace_coords(self, frac_coords) -> "Crystal":
        return Crystal(self.types, frac_coords, self.lattice)

    def replace_types(self, types) -> "Crystal":
        return Crystal(types, self.frac_coords, self.lattice)

    def __eq__(self, other):
        return (
            isinstance(other, Crystal)
            and np.array_equal(self.types, other.types)
            and np.array_equal(self.frac_coords, other.frac_coords)
            and self.lattice == other.lattice
        )

    def __hash__(self):
        return hash(
            (self.types.tobytes(), self.frac_coords.tobytes(), self.lattice)
        )


def frac_to_cart(crystal: Crystal) -> np.ndarray:
    """Cartesian coordinates (angstrom) of all atoms: ``frac @ L``."""
    return crystal.cart_coords()


def min_image_displacements(
    lattice: Lattice, from_frac: np.ndarray, to_frac: np.ndarray
) -> np.ndarray:
    """Minimum-image Cartesian displacement vectors row by row.

    Wraps each fractional difference into [-0.5, 0.5)^3 and searches the
    27 images in [-1..1]^3, which is exact for Niggli-reduced cells;
    callers holding strongly skewed cells must reduce first. Ties are
    broken by lexicographic image order.
    """
    delta = wrap_half(np.atleast_2d(to_frac) - np.atleast_2d(from_frac))
    cand = (delta[:, None, :] + IMAGE_OFFSETS[None, :, :]) @ lattice.rows
    norms = np.einsum("nkj,nkj->nk", cand, cand)
    best = np.argmin(norms, axis=1)
    return cand[np.arange(len(best)), best]


def min_image_displacement(
    lattice: Lattice, x_from: np.ndarray, x_to: np.ndarray
) -> np.ndarray:
    """Shortest Cartesian displacement from ``x_from`` to ``x_to`` over
    periodic images (both fractional)."""
    return min_image_displacements(lattice, x_from, x_to)[0]


def lattice_params(lattice: Lattice) -> LatticeParams:
    """Rotation-invariant 6-parameter form (lengths, angles)."""
    rows = lattice.rows
    a, b, c = (float(np.linalg.norm(rows[i])) for i in range(3))

    def angle(u, v):
        cosang = float(np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v)))
        return math.degrees(math.acos(max(-1.0, min(1.0, cosang))))

    return LatticeParams(
        a=a,
        b=b,
        c=c,
        alpha=angle(rows[1], rows[2]),
        beta=angle(rows[0], rows[2]),
        gamma=angle(rows[0], rows[1]),
    )


def params_to_lattice(params: LatticeParams) -> Lattice:
    """Build the canonical-orientation lattice: l1 along +x, l2 in the
    xy-plane with positive y, l3 with positive z."""
    a, b, c = params.a, params.b, params.c
    ca, cb, cg = (
        math.cos(math.radians(x)) for x in (params.alpha, params.beta, params.gamma)
    )
    sg = math.sin(math.radians(params.gamma))
    l1 = (a, 0.0, 0.0)
    l2 = (b * cg, b * sg, 0.0)
    cx = c * cb
    cy = c * (ca - cb * cg) / sg
    cz2 = c * c - cx * cx - cy * cy
    if cz2 <= 0.0:
        raise ValueError("angle triple does not define a positive-definite cell")
    l3 = (cx, cy, math.sqrt(cz2))
    return Lattice(np.array([l1, l2, l3]))


def normalized_length_scale(crystal: Crystal) -> float:
    """cbrt(V/N): the per-atom length scale used to normalize site
    displacements."""
    return float(np.cbrt(crystal.volume / crystal.n_atoms))


def normalize_lengths_by_atom_count(params: LatticeParams, n_atoms: int) -> LatticeParams:
    """Scale cell lengths by N^(-1/3) so cells of different sizes live on
    a common scale. Provided for downstream consumers; nothing in this
    package uses it."""
    if n_atoms < 1:
        raise ValueError("n_atoms must be >= 1")
    s = float(n_atoms) ** (-1.0 / 3.0)
    return LatticeParams(
        params.a * s, params.b * s, params.c * s,
        params.alpha, params.beta, params.gamma,
    )


# --- Niggli reduction (Krivy-Gruber iteration) -------------------------------

# basis-change matrices act on rows from the left: L' = P @ L
_P_SWAP_AB = np.array([[0, -1, 0], [-1, 0, 0], [0, 0, -1]])
_P_SWAP_BC = np.array([[-1, 0, 0], [0, 0, -1], [0, -1, 0]])


def _metric_chars(g: np.ndarray):
    return g[0, 0], g[1, 1], g[2, 2], 2 * g[1, 2], 2 * g[0, 2], 2 * g[0, 1]


def niggli_reduce(lattice: Lattice) -> Lattice:
    """Canonical Niggli cell of the same point lattice.

    Follows the standard Krivy-Gruber step sequence on the metric
    characters, accumulating the unimodular row transform so the result
    is exactly ``P @ L`` with det(P) = 1: same lattice, same volume.
    Tolerance is 1e-5 * cbrt(volume); raises if the iteration has not
    converged after 100 steps.
    """
    vol = lattice.volume
    if vol < 1e-10:
        raise ValueError("cannot Niggli-reduce a (near-)degenerate lattice")
    eps = NIGGLI_TOL_FACTOR * vol ** (1.0 / 3.0)

    g = lattice.rows @ lattice.rows.T
    p_total = np.eye(3, dtype=int)

    def apply(p):
        nonlocal g, p_total
        g = p @ g @ p.T
        p_total = p @ p_total

    for _ in range(NIGGLI_MAX_ITER):
        aa, bb, cc, xi, eta, zeta = _metric_chars(g)

        # A1: order |l1| <= |l2|
        if aa > bb + eps or (abs(aa - bb) <= eps and abs(xi) > abs(eta) + eps):
            apply(_P_SWAP_AB)
            aa, bb, cc, xi, eta, zeta = _metric_chars(g)
        # A2: order |l2| <= |l3|, then restart
        if bb > cc + eps or (abs(bb - cc) <= eps and abs(eta) > abs(zeta) + eps):
            apply(_P_SWAP_BC)
            continue

        if xi * eta * zeta > 0:
            # A3: make all three angles acute
            i = -1 if xi < 0 else 1
            j = -1 if eta < 0 else 1
            k = -1 if zeta < 0 else 1
            apply(np.diag((i, j, k)))
        else:
            # A4: make all three angles non-acute; if an odd number of
            # sign flips would be needed, flip along a vanishing
            # character to keep det = +1
            i = -1 if xi > eps else 1
            j = -1 if eta > eps else 1
            k = -1 if zeta > eps else 1
            if i * j * k == -1:
                if abs(zeta) <= eps:
                    k = -1
                elif abs(eta) <= eps:
                    j = -1
                elif abs(xi) <= eps:
                    i = -1
                else:
                    raise RuntimeError("inconsistent sign state in Niggli A4")
            apply(np.diag((i, j, k)))
        aa, bb, cc, xi, eta, zeta = _metric_chars(g)

        # A5: reduce l3 along l2
        if (
            abs(xi) > bb + eps
            or (abs(xi - bb) <= eps and 2 * eta < zeta - eps)
            or (abs(xi + bb) <= eps and zeta < -eps)
        ):
            s = 1 if xi > 0 else -1
            apply(np.array([[1, 0, 0], [0, 1, 0], [0, -s, 1]]))
            continue
        # A6: reduce l3 along l1
        if (
            abs(eta) > aa + eps
            or (abs(eta - aa) <= eps and 2 * xi < zeta - eps)
            or (abs(eta + aa) <= eps and zeta < -eps)
        ):
            s = 1 if eta > 0 else -1
            apply(np.array([[1, 0, 0], [0, 1, 0], [-s, 0, 1]]))
            continue
        # A7: reduce l2 along l1
        if (
            abs(zeta) > aa + eps
            or (abs(zeta - aa) <= eps and 2 * xi < eta - eps)
            or (abs(zeta + aa) <= eps and eta < -eps)
        ):
            s = 1 if zeta > 0 else -1
            apply(np.array([[1, 0, 0], [-s, 1, 0], [0, 0, 1]]))
            continue
        # A8: final body-diagonal reduction
        total = xi + eta + zeta + aa + bb
        if total < -eps or (abs(total) <= eps and 2 * (aa + eta) + zeta > eps):
            apply(np.array([[1, 0, 0], [0, 1, 0], [1, 1, 1]]))
            continue
        return Lattice(p_total.astype(float) @ lattice.rows)

    raise RuntimeError(
        f"Niggli reduction did not converge within {NIGGLI_MAX_ITER} iterations"
    )


def reduce_crystal(crystal: Crystal) -> Crystal:
    """Re-express a crystal in its Niggli-reduced cell (coordinates are
    remapped and wrapped; the structure itself is unchanged)."""
    reduced = niggli_reduce(crystal.lattice)
    # L' = P @ L with unimodular P, so frac' = frac @ inv(P) = frac @ L @ inv(L')
    inv_p = crystal.lattice.rows @ reduced.inv
    return Crystal(crystal.types, crystal.frac_coords @ inv_p, reduced)
