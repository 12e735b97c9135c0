"""
Symmetry classes of slab fields.

Radial fields are stored on the full planar grid; the angular average is taken over
cell centres of equal planar radius. The involution sigma is the negated half-period
shift in x3, exact on-grid because N_z is even.
"""

from __future__ import annotations

import functools

import numpy as np
from numpy.typing import NDArray

from chainsolve.fields import Field, forward_differences
from chainsolve.resilience import GridError
from chainsolve.schemas import SymmetryTag


@functools.lru_cache(maxsize=32)
def _radius_classes(n: int) -> tuple[NDArray, NDArray]:
    """Label of each planar cell by its exact integer squared radius, and class sizes"""
    # cell centres sit at (h/2)(2i - n + 1), so squared radii are integers in these units
    odd = 2 * np.arange(n) - n + 1
    key = odd[:, None] ** 2 + odd[None, :] ** 2
    _, labels = np.unique(key, return_inverse=True)
    labels = labels.reshape(n, n)
    counts = np.bincount(labels.ravel())
    labels.setflags(write=False)
    counts.setflags(write=False)
    return labels, counts


def radialize(u: Field) -> Field:
    """Angular average over the planar variable at each (|x'|, x3)"""
    labels, counts = _radius_classes(u.grid.n_x)
    flat = labels.ravel()
    values = u.values.reshape(u.grid.n_x * u.grid.n_x, -1)
    out = np.empty_like(values)
    for k in range(values.shape[1]):
        means = np.bincount(flat, weights=values[:, k]) / counts
        out[:, k] = means[flat]
    out = out.reshape(u.values.shape)
    tag = SymmetryTag.RADIAL
    if u.symmetry in (SymmetryTag.G_INVARIANT, SymmetryTag.PLANAR_CONSTANT):
        tag = u.symmetry
    return u.replace(out, tag)


def sigma_apply(u: Field) -> Field:
    """sigma*u(x', x3) = -u(x', x3 - ell) on the periodic x3 circle"""
    if u.is_planar:
        raise GridError("sigma acts on slab fields only")
    if u.grid.n_z % 2:
        raise GridError("sigma needs an even number of x3 samples")
    return u.replace(-np.roll(u.values, u.grid.n_z // 2, axis=2))


def project_G(u: Field) -> Field:
    """Projection onto radial sigma-invariant fields: radialize((u + sigma*u) / 2)"""
    averaged = u.replace(0.5 * (u.values + sigma_apply(u).values), SymmetryTag.GENERAL)
    radial = radialize(averaged)
    return radial.replace(radial.values, SymmetryTag.G_INVARIANT)


def project_planar(u: Field) -> Field:
    """Projection onto x3-constant radial fields"""
    if u.is_planar:
        return radialize(u)
    mean = u.values.mean(axis=2, keepdims=True)
    constant = u.replace(np.broadcast_to(mean, u.values.shape).copy(), SymmetryTag.GENERAL)
    radial = radialize(constant)
    return radial.replace(radial.values, SymmetryTag.PLANAR_CONSTANT)


def d3_energy_fraction(u: Field) -> float:
    """Share of the gradient energy carried by the x3 derivative"""
    if u.is_planar:
        raise GridError("d3_energy_fraction needs a slab field")
    dx, dy, dz = forward_differences(u.values, u.grid)
    d3 = float(np.sum(dz * dz))
    total = float(np.sum(dx * dx) + np.sum(dy * dy)) + d3
    if total == 0.0:
        raise GridError("d3_energy_fraction is undefined for fields with zero gradient")
    return d3 / total


def symmetry_defect(u: Field, tag: SymmetryTag) -> float:
    """Max deviation from the invariant of tag"""
    scale = max(float(np.abs(u.values).max(initial=0.0)), 1e-300)
    if tag == SymmetryTag.RADIAL:
        return float(np.abs(radialize(u).values - u.values).max()) / scale
    if tag == SymmetryTag.G_INVARIANT:
        return float(np.abs(sigma_apply(u).values - u.values).max()) / scale
    if tag == SymmetryTag.PLANAR_CONSTANT:
        return float(np.ptp(u.values, axis=2).max()) / scale
    return 0.0


def projector_for(symmetry: str):
    """Projection for a solver symmetry class"""
    projectors = {
        "radial": radialize,
        "g_invariant": project_G,
        "planar": project_planar,
    }
    return projectors[symmetry]
