"""Shared generators and independent oracles for the test suite."""

import itertools

import numpy as np
import pytest

from xtalgen.core import Crystal, Lattice, niggli_reduce, wrap_to_cell
from xtalgen.rng import make_rng

COMMON_SPECIES = np.array([3, 6, 8, 11, 13, 14, 17, 20, 26, 29])


def random_rotation(rng) -> np.ndarray:
    """Haar-ish random proper rotation via QR."""
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def random_lattice(rng, scale=4.0, skew=0.35) -> Lattice:
    """Well-conditioned random cell: diagonal lengths plus bounded skew."""
    m = np.diag(rng.uniform(0.7 * scale, 1.3 * scale, 3))
    m = m + rng.normal(0.0, skew, (3, 3))
    if np.linalg.det(m) < 0:
        m = m[::-1].copy()
    return Lattice(m)


def random_reduced_lattice(rng, scale=4.0, skew=0.35) -> Lattice:
    return niggli_reduce(random_lattice(rng, scale=scale, skew=skew))


def random_crystal(rng, n_min=2, n_max=8, scale=4.0, species=COMMON_SPECIES) -> Crystal:
    n = int(rng.integers(n_min, n_max + 1))
    return Crystal(
        rng.choice(species, size=n),
        rng.random((n, 3)),
        random_lattice(rng, scale=scale),
    )


def rotate_lattice(lattice: Lattice, rot: np.ndarray) -> Lattice:
    return Lattice(lattice.rows @ rot)


def brute_force_min_image(rows, f_from, f_to, radius=3):
    """Exhaustive minimum-image search over k in [-radius..radius]^3."""
    delta = np.asarray(f_to, dtype=float) - np.asarray(f_from, dtype=float)
    best_vec, best_norm = None, np.inf
    for k in itertools.product(range(-radius, radius + 1), repeat=3):
        v = (delta + np.array(k, dtype=float)) @ rows
        n = float(v @ v)
        if n < best_norm:
            best_norm, best_vec = n, v
    return best_vec


def successive_minima(rows, radius=5):
    """Lengths of the three successive minima of the lattice, found by
    exhaustive enumeration of integer combinations in a bounded box. In
    3D a lattice basis attains them, so they are exactly the sorted
    Niggli cell lengths."""
    coeffs = np.array(
        [
            k
            for k in itertools.product(range(-radius, radius + 1), repeat=3)
            if k != (0, 0, 0)
        ],
        dtype=float,
    )
    vecs = coeffs @ rows
    lengths = np.linalg.norm(vecs, axis=1)
    order = np.argsort(lengths, kind="stable")
    chosen: list[np.ndarray] = []
    minima: list[float] = []
    for idx in order:
        v = vecs[idx]
        if len(chosen) == 0:
            indep = True
        elif len(chosen) == 1:
            indep = np.linalg.norm(np.cross(chosen[0], v)) > 1e-9
        else:
            indep = abs(np.linalg.det(np.array([chosen[0], chosen[1], v]))) > 1e-9
        if indep:
            chosen.append(v)
            minima.append(float(lengths[idx]))
            if len(chosen) == 3:
                return np.array(minima)
    raise AssertionError("enumeration box too small for this lattice")


def random_unimodular(rng, n_shears=3):
    """Product of elementary shears and swaps; det +1, small entries."""
    p = np.eye(3, dtype=int)
    for _ in range(n_shears):
        i, j = rng.choice(3, size=2, replace=False)
        e = np.eye(3, dtype=int)
        e[i, j] = int(rng.choice([-1, 1]))
        p = e @ p
    assert round(abs(float(np.linalg.det(p)))) == 1
    if np.linalg.det(p) < 0:
        p[[0, 1]] = p[[1, 0]]
    return p


def lp_transport_cost(a, b):
    """Optimal transport cost between two empirical distributions via a
    linear program; independent of any sorted-CDF computation."""
    from scipy.optimize import linprog

    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    n, m = len(a), len(b)
    cost = np.abs(a[:, None] - b[None, :]).ravel()
    a_eq = []
    b_eq = []
    for i in range(n):
        row = np.zeros(n * m)
        row[i * m : (i + 1) * m] = 1.0
        a_eq.append(row)
        b_eq.append(1.0 / n)
    for j in range(m):
        row = np.zeros(n * m)
        row[j::m] = 1.0
        a_eq.append(row)
        b_eq.append(1.0 / m)
    res = linprog(cost, A_eq=np.array(a_eq), b_eq=np.array(b_eq), bounds=(0, None))
    assert res.success
    return float(res.fun)


@pytest.fixture
def rng():
    return make_rng(20240817)


def shifted_crystal(crystal: Crystal, shift) -> Crystal:
    return Crystal(
        crystal.types, wrap_to_cell(crystal.frac_coords + np.asarray(shift)), crystal.lattice
    )
