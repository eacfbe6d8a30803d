"""Drift potentials: named 2-D landscapes and multivariate polynomials.

Every potential exposes `value` and `gradient`, vectorized over point clouds
of shape (..., d).  Polynomials are parameterized by monomial coefficients
indexed by exponent multi-indices; the matching gradient basis makes the
drift fit linear in the coefficients.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

# Slope of the linear gradient extension outside a named potential's clip box.
GROWTH_SLOPE = 1.0


def multi_indices(dim: int, degree: int) -> list[tuple[int, ...]]:
    """Exponent multi-indices with 1 <= |alpha| <= degree, graded lexicographic.

    Indices are ordered by total degree, then lexicographically descending
    within a degree, e.g. for dim=2, degree=2: (1,0), (0,1), (2,0), (1,1), (0,2).
    The constant term is excluded: it never moves the gradient.
    """
    if dim < 1 or degree < 1:
        raise ValueError("dim and degree must be positive")
    out: list[tuple[int, ...]] = []
    for total in range(1, degree + 1):
        grade = [a for a in itertools.product(range(total + 1), repeat=dim) if sum(a) == total]
        grade.sort(reverse=True)
        out.extend(grade)
    return out


def _check_points(x, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 or x.shape[-1] != dim:
        raise ValueError(f"points have trailing dimension {x.shape[-1] if x.ndim else 0}, expected {dim}")
    return x


def _powers(x: np.ndarray, degree: int) -> np.ndarray:
    """Table of coordinate powers x_i^p for p = 0..degree, shape (..., d, degree+1)."""
    return x[..., None] ** np.arange(degree + 1)


class PolynomialPotential:
    """Psi(x) = sum_alpha c_alpha * x^alpha over exponent multi-indices alpha."""

    def __init__(self, dim: int, degree: int, coefficients: dict[tuple[int, ...], float]):
        if dim < 1 or degree < 1:
            raise ValueError("dim and degree must be positive")
        self.dim = int(dim)
        self.degree = int(degree)
        clean: dict[tuple[int, ...], float] = {}
        for alpha, c in coefficients.items():
            alpha = tuple(int(a) for a in alpha)
            if len(alpha) != dim or any(a < 0 for a in alpha):
                raise ValueError(f"multi-index {alpha} invalid for dim {dim}")
            if not 1 <= sum(alpha) <= degree:
                raise ValueError(f"multi-index {alpha} outside degree range 1..{degree}")
            c = float(c)
            if not math.isfinite(c):
                raise ValueError(f"coefficient for {alpha} is not finite")
            if c != 0.0:
                clean[alpha] = clean.get(alpha, 0.0) + c
        self.coefficients = clean

    def value(self, x) -> np.ndarray:
        x = _check_points(x, self.dim)
        pw = _powers(x, self.degree)
        out = np.zeros(x.shape[:-1])
        for alpha, c in self.coefficients.items():
            term = np.ones(x.shape[:-1])
            for i, a in enumerate(alpha):
                if a:
                    term = term * pw[..., i, a]
            out += c * term
        return out

    def gradient(self, x) -> np.ndarray:
        x = _check_points(x, self.dim)
        pw = _powers(x, self.degree)
        out = np.zeros(x.shape)
        for alpha, c in self.coefficients.items():
            for i, a in enumerate(alpha):
                if not a:
                    continue
                term = np.full(x.shape[:-1], c * a)
                for j, b in enumerate(alpha):
                    p = b - 1 if j == i else b
                    if p:
                        term = term * pw[..., j, p]
                out[..., i] += term
        return out

    def scaled(self, factor: float) -> "PolynomialPotential":
        return PolynomialPotential(
            self.dim, self.degree, {a: factor * c for a, c in self.coefficients.items()}
        )

    def to_dict(self) -> dict:
        coeffs = [
            {"alpha": list(alpha), "value": c}
            for alpha, c in sorted(self.coefficients.items(), key=lambda kv: (sum(kv[0]), tuple(-a for a in kv[0])))
        ]
        return {"kind": "polynomial", "d": self.dim, "k": self.degree, "coeffs": coeffs}

    @classmethod
    def from_dict(cls, spec: dict) -> "PolynomialPotential":
        coeffs = {tuple(item["alpha"]): float(item["value"]) for item in spec["coeffs"]}
        return cls(int(spec["d"]), int(spec["k"]), coeffs)

    def __eq__(self, other):
        return (
            isinstance(other, PolynomialPotential)
            and self.dim == other.dim
            and self.degree == other.degree
            and self.coefficients == other.coefficients
        )

    def __repr__(self):
        return f"PolynomialPotential(dim={self.dim}, degree={self.degree}, {len(self.coefficients)} terms)"


def gradient_basis(x, dim: int, degree: int) -> np.ndarray:
    """Stacked monomial gradients grad(x^alpha), shape (..., n_basis, d).

    Basis order follows multi_indices(dim, degree); component i of entry alpha
    is alpha_i * x^(alpha - e_i).
    """
    x = _check_points(x, dim)
    alphas = multi_indices(dim, degree)
    pw = _powers(x, degree)
    out = np.zeros(x.shape[:-1] + (len(alphas), dim))
    for b, alpha in enumerate(alphas):
        for i, a in enumerate(alpha):
            if not a:
                continue
            term = np.full(x.shape[:-1], float(a))
            for j, bb in enumerate(alpha):
                p = bb - 1 if j == i else bb
                if p:
                    term = term * pw[..., j, p]
            out[..., b, i] = term
    return out


def _st_value(x1, x2):
    return 0.5 * (x1**4 - 16.0 * x1**2 + 5.0 * x1) + 0.5 * (x2**4 - 16.0 * x2**2 + 5.0 * x2)


def _st_grad(x1, x2):
    return 2.0 * x1**3 - 16.0 * x1 + 2.5, 2.0 * x2**3 - 16.0 * x2 + 2.5


def _quad_value(x1, x2):
    return x1**2 + x2**2


def _quad_grad(x1, x2):
    return 2.0 * x1, 2.0 * x2


def _boha_value(x1, x2):
    return 10.0 * (x1**2 + 2.0 * x2**2 - 0.3 * np.cos(3.0 * np.pi * x1) - 0.4 * np.cos(4.0 * np.pi * x2))


def _boha_grad(x1, x2):
    g1 = 10.0 * (2.0 * x1 + 0.9 * np.pi * np.sin(3.0 * np.pi * x1))
    g2 = 10.0 * (4.0 * x2 + 1.6 * np.pi * np.sin(4.0 * np.pi * x2))
    return g1, g2


def _wavy_value(x1, x2):
    return (np.cos(np.pi * x1) + 0.5 * x1**4 - 3.0 * x1**2 + 1.0) + (
        np.cos(np.pi * x2) + 0.5 * x2**4 - 3.0 * x2**2 + 1.0
    )


def _wavy_grad(x1, x2):
    g1 = -np.pi * np.sin(np.pi * x1) + 2.0 * x1**3 - 6.0 * x1
    g2 = -np.pi * np.sin(np.pi * x2) + 2.0 * x2**3 - 6.0 * x2
    return g1, g2


def _oakley_value(x1, x2):
    return 5.0 * (np.sin(x1) + np.cos(x1) + x1**2 + x1) + 5.0 * (np.sin(x2) + np.cos(x2) + x2**2 + x2)


def _oakley_grad(x1, x2):
    g1 = 5.0 * (np.cos(x1) - np.sin(x1) + 2.0 * x1 + 1.0)
    g2 = 5.0 * (np.cos(x2) - np.sin(x2) + 2.0 * x2 + 1.0)
    return g1, g2


_NAMED = {
    "quadratic": (_quad_value, _quad_grad),
    "styblinski_tang": (_st_value, _st_grad),
    "bohachevsky": (_boha_value, _boha_grad),
    "wavy_plateau": (_wavy_value, _wavy_grad),
    "oakley_ohagan": (_oakley_value, _oakley_grad),
}

NAMED_KINDS = tuple(_NAMED)


@dataclass(frozen=True)
class NamedPotential:
    """One of the closed-form 2-D landscapes, clipped to linear gradient growth.

    Inside the box |x_i| <= clip_radius the formula is exact.  Outside, the
    gradient is extended continuously as grad(xb) + GROWTH_SLOPE * (x - xb),
    where xb is the componentwise clip of x onto the box, so the magnitude
    grows linearly and simulations stay confining.  `scale` multiplies the
    whole (extended) potential; it is what model rescaling adjusts.
    """

    kind: str
    clip_radius: float = 10.0
    scale: float = 1.0
    dim: int = field(default=2, init=False)

    def __post_init__(self):
        if self.kind not in _NAMED:
            raise ValueError(f"unknown potential kind {self.kind!r}, expected one of {NAMED_KINDS}")
        if not self.clip_radius > 0:
            raise ValueError("clip_radius must be positive")

    def _clipped(self, x):
        xb = np.clip(x, -self.clip_radius, self.clip_radius)
        return xb, x - xb

    def value(self, x) -> np.ndarray:
        x = _check_points(x, self.dim)
        xb, excess = self._clipped(x)
        vfun, gfun = _NAMED[self.kind]
        v = vfun(xb[..., 0], xb[..., 1])
        g1, g2 = gfun(xb[..., 0], xb[..., 1])
        v = v + g1 * excess[..., 0] + g2 * excess[..., 1]
        v = v + 0.5 * GROWTH_SLOPE * (excess**2).sum(axis=-1)
        return self.scale * v

    def gradient(self, x) -> np.ndarray:
        x = _check_points(x, self.dim)
        xb, excess = self._clipped(x)
        _, gfun = _NAMED[self.kind]
        g1, g2 = gfun(xb[..., 0], xb[..., 1])
        out = np.stack([g1, g2], axis=-1) + GROWTH_SLOPE * excess
        return self.scale * out

    def scaled(self, factor: float) -> "NamedPotential":
        return NamedPotential(self.kind, self.clip_radius, self.scale * factor)

    def to_dict(self) -> dict:
        spec = {"kind": self.kind, "clip_radius": self.clip_radius}
        if self.scale != 1.0:
            spec["scale"] = self.scale
        return spec

    @classmethod
    def from_dict(cls, spec: dict) -> "NamedPotential":
        return cls(spec["kind"], float(spec.get("clip_radius", 10.0)), float(spec.get("scale", 1.0)))


def potential_from_dict(spec: dict):
    """Rebuild a potential from its JSON form."""
    kind = spec.get("kind")
    if kind == "polynomial":
        return PolynomialPotential.from_dict(spec)
    if kind in _NAMED:
        return NamedPotential.from_dict(spec)
    raise ValueError(f"unknown potential kind {kind!r}")


def polynomial_form(potential) -> PolynomialPotential:
    """Express a potential as a PolynomialPotential when it exactly is one."""
    if isinstance(potential, PolynomialPotential):
        return potential
    if isinstance(potential, NamedPotential) and potential.kind == "quadratic":
        s = potential.scale
        return PolynomialPotential(2, 2, {(2, 0): s, (0, 2): s})
    raise ValueError(f"{potential!r} has no exact polynomial form")


def growth_constant(potential, box_half: float, n_samples: int = 4096, seed: int = 0) -> float:
    """Numerical bound max ||grad Psi(x)|| / (1 + ||x||) over a sampled box."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(-box_half, box_half, size=(n_samples, potential.dim))
    g = potential.gradient(x)
    return float(np.max(np.linalg.norm(g, axis=-1) / (1.0 + np.linalg.norm(x, axis=-1))))
