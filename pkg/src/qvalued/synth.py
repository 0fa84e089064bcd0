"""Synthetic multiple-valued test functions on uniform grids.

Five generator families:

* ``affine``      -- exact affine branches around the grid center (the model
                     class of the differential fit, noiseless by default).
* ``diagonal``    -- Q copies of one smooth branch.
* ``branchpoint`` -- the two square roots of z^3 over [-1, 1]^2, a
                     continuous pair that admits no continuous selection
                     around the origin.
* ``weierstrass_mix`` -- on [0, 1]^2, a lacunary-cosine rough branch for
                     u < 1/2 and a gentle affine branch for u >= 1/2, lifted
                     to the pair {m, -m}; the known rough/smooth partition
                     drives the stratification checks.
* ``separated_smooth`` -- two widely separated smooth branches (z^2 and its
                     negative, offset), with closed-form Jacobians.

Every generator is bitwise reproducible from its seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diff import SampledQFunction
from .errors import PreconditionError
from .space import PointCloudSpace

__all__ = [
    "SyntheticSpec",
    "GENERATORS",
    "generate",
    "unit_grid_space",
    "weierstrass",
    "WEIERSTRASS_A",
    "WEIERSTRASS_B",
    "WEIERSTRASS_TERMS",
    "MIX_CUT",
]

WEIERSTRASS_A = 0.5
WEIERSTRASS_B = 7.0
WEIERSTRASS_TERMS = 21  # n = 0..20
MIX_CUT = 0.5


def unit_grid_space(n: int, dim: int = 2, low: float = 0.0, high: float = 1.0) -> PointCloudSpace:
    """Uniform n^dim grid on [low, high]^dim with unit weights, row-major order."""
    if n < 2:
        raise PreconditionError("grid needs at least 2 points per axis")
    axis = np.linspace(low, high, n)
    mesh = np.meshgrid(*([axis] * dim), indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    return PointCloudSpace.from_points(pts)


def weierstrass(t: np.ndarray, a: float = WEIERSTRASS_A, b: float = WEIERSTRASS_B,
                terms: int = WEIERSTRASS_TERMS) -> np.ndarray:
    """Lacunary cosine series sum a^n cos(b^n pi t), heavily oscillating at
    every sampled scale for a*b > 1."""
    t = np.asarray(t, dtype=np.float64)
    out = np.zeros_like(t)
    for n in range(terms):
        out += a**n * np.cos(b**n * np.pi * t)
    return out


@dataclass(frozen=True)
class SyntheticSpec:
    """Declarative description of one synthetic instance."""

    generator: str
    grid: int = 33
    q: int = 2
    k: int = 1
    dim: int = 2
    amplitude: float = 1.0
    noise: float = 0.0
    seed: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise PreconditionError(
                f"unknown generator {self.generator!r}; choose from {sorted(GENERATORS)}"
            )
        if self.grid < 2:
            raise PreconditionError("grid must be >= 2")
        if self.q < 1 or self.k < 1 or self.dim < 1:
            raise PreconditionError("q, k and dim must be >= 1")
        if self.noise < 0:
            raise PreconditionError("noise must be nonnegative")


def _gen_affine(spec: SyntheticSpec):
    """Q affine branches p_i + M_i (y - center) with well separated p_i."""
    space = unit_grid_space(spec.grid, spec.dim, -1.0, 1.0)
    rng = np.random.default_rng(spec.seed)
    center = np.zeros(spec.dim)
    # Base values on a coarse lattice: pairwise separation >= 2.
    p = np.zeros((spec.q, spec.k))
    p[:, 0] = 2.0 * np.arange(spec.q)
    matrices = rng.uniform(-0.5, 0.5, size=(spec.q, spec.k, spec.dim)) * spec.amplitude
    rel = space.points - center
    vals = p[None, :, :] + np.einsum("qkn,mn->mqk", matrices, rel)
    if spec.noise > 0:
        vals = vals + rng.normal(0.0, spec.noise, size=vals.shape)
    f = SampledQFunction(space, np.arange(len(space)), vals)
    info = {"p": p, "matrices": matrices, "center_index": _center_index(spec.grid, spec.dim)}
    return f, info


def _gen_diagonal(spec: SyntheticSpec):
    """Q copies of one smooth branch g (componentwise sin/cos waves)."""
    space = unit_grid_space(spec.grid, spec.dim, -1.0, 1.0)
    pts = space.points
    g = np.stack(
        [spec.amplitude * np.sin(np.pi * pts[:, 0] / 2 + c) * np.cos(np.pi * pts[:, min(1, spec.dim - 1)] / 3)
         for c in range(spec.k)],
        axis=1,
    )
    vals = np.repeat(g[:, None, :], spec.q, axis=1)
    f = SampledQFunction(space, np.arange(len(space)), vals)
    return f, {"branch": g, "center_index": _center_index(spec.grid, spec.dim)}


def _gen_branchpoint(spec: SyntheticSpec):
    """The unordered pair of square roots of z^3 on a grid over [-1, 1]^2."""
    if spec.dim != 2:
        raise PreconditionError("branchpoint is a planar generator (dim=2)")
    space = unit_grid_space(spec.grid, 2, -1.0, 1.0)
    z = space.points[:, 0] + 1j * space.points[:, 1]
    w = np.sqrt(z**3) * spec.amplitude
    vals = np.stack(
        [np.stack([w.real, w.imag], axis=1), np.stack([-w.real, -w.imag], axis=1)],
        axis=1,
    )
    f = SampledQFunction(space, np.arange(len(space)), vals)
    return f, {"center_index": _center_index(spec.grid, 2)}


def _mix_branch(points: np.ndarray, amplitude: float) -> np.ndarray:
    u, v = points[:, 0], points[:, 1]
    rough = amplitude * weierstrass(u)
    smooth = 0.25 * (u + v)
    return np.where(u < MIX_CUT, rough, smooth)


def _gen_weierstrass_mix(spec: SyntheticSpec):
    """Pair {m, -m} with m rough for u < 1/2 and gently affine for u >= 1/2."""
    if spec.dim != 2:
        raise PreconditionError("weierstrass_mix is a planar generator (dim=2)")
    space = unit_grid_space(spec.grid, 2, 0.0, 1.0)
    m = _mix_branch(space.points, spec.amplitude)
    vals = np.stack([m, -m], axis=1)[:, :, None]
    f = SampledQFunction(space, np.arange(len(space)), vals)
    rough_mask = space.points[:, 0] < MIX_CUT
    return f, {"rough_mask": rough_mask, "cut": MIX_CUT}


def _gen_separated_smooth(spec: SyntheticSpec):
    """Branches z^2 and -z^2 + (5, 0): smooth, separation >= 1 on [-1, 1]^2."""
    if spec.dim != 2:
        raise PreconditionError("separated_smooth is a planar generator (dim=2)")
    space = unit_grid_space(spec.grid, 2, -1.0, 1.0)
    u, v = space.points[:, 0], space.points[:, 1]
    z2 = np.stack([u * u - v * v, 2 * u * v], axis=1)
    offset = np.array([5.0, 0.0])
    vals = np.stack([z2, -z2 + offset], axis=1)
    f = SampledQFunction(space, np.arange(len(space)), vals)

    def jacobians(point: np.ndarray) -> np.ndarray:
        uu, vv = point
        j = np.array([[2 * uu, -2 * vv], [2 * vv, 2 * uu]])
        return np.stack([j, -j])

    return f, {"jacobians": jacobians, "offset": offset,
               "center_index": _center_index(spec.grid, 2)}


def _center_index(n: int, dim: int) -> int:
    mid = (n - 1) // 2
    idx = 0
    for _ in range(dim):
        idx = idx * n + mid
    return idx


GENERATORS = {
    "affine": _gen_affine,
    "diagonal": _gen_diagonal,
    "branchpoint": _gen_branchpoint,
    "weierstrass_mix": _gen_weierstrass_mix,
    "separated_smooth": _gen_separated_smooth,
}


def generate(spec: SyntheticSpec):
    """Build (function, info) for a spec.  `info` carries generator-specific
    ground truth (branch matrices, rough/smooth partition, Jacobians)."""
    return GENERATORS[spec.generator](spec)
