"""Single- and multi-bubble ansatz fields with smooth cutoff.

A bubble of scale ``delta`` at ``center`` is the standard extremal profile

    (sqrt(n(n-2)) * delta / (delta^2 + d^2))^((n-2)/2),

transplanted to the model through the geodesic distance d to the center,
multiplied by a smooth cutoff in d and an optional conformal factor.  The
module also enforces the admissibility cone on collections of bubbles
(comparable scales, mutual separation large against the scales).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import _smoothstep
from .geometry import GeometryError, ManifoldModel

__all__ = [
    "CutoffSpec",
    "BubbleParams",
    "Configuration",
    "ScalarField",
    "BubbleField",
    "SumField",
    "bubble_eval",
    "multi_bubble_eval",
    "bubble_gradient",
    "is_admissible",
]


@dataclass(frozen=True)
class CutoffSpec:
    """Smooth radial cutoff: 1 on [0, r0/2], 0 on [r0, inf)."""

    r0: float

    @classmethod
    def for_model(cls, model, fraction=0.25):
        """Default cutoff at a fixed fraction of the injectivity radius."""
        return cls(r0=fraction * model.injectivity_radius)

    def value(self, r):
        if not math.isfinite(self.r0):
            return np.ones_like(np.asarray(r, dtype=float))
        return _smoothstep.step(2.0 * (self.r0 - np.asarray(r, float)) / self.r0)

    def d1(self, r):
        if not math.isfinite(self.r0):
            return np.zeros_like(np.asarray(r, dtype=float))
        t = 2.0 * (self.r0 - np.asarray(r, float)) / self.r0
        return _smoothstep.step_d1(t) * (-2.0 / self.r0)

    def d2(self, r):
        if not math.isfinite(self.r0):
            return np.zeros_like(np.asarray(r, dtype=float))
        t = 2.0 * (self.r0 - np.asarray(r, float)) / self.r0
        return _smoothstep.step_d2(t) * (4.0 / self.r0**2)

    @classmethod
    def none(cls):
        """No cutoff (chi = 1 everywhere); only sensible on flat models."""
        return cls(r0=math.inf)


@dataclass(frozen=True)
class BubbleParams:
    """Scale, center, and optional conformal factor of one bubble."""

    delta: float
    center: np.ndarray
    conformal_factor: object = None  # callable Point batch -> positive values

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("bubble scale must be positive")


@dataclass(frozen=True)
class Configuration:
    """A collection of bubbles together with its admissibility cone.

    alpha bounds scale ratios (1/alpha < delta_i/delta_j < alpha), K bounds
    separations from below (d(xi_i, xi_j)^2 / (delta_i delta_j) > K), and
    delta_bar is the ceiling on individual scales.
    """

    bubbles: tuple
    alpha: float = 2.0
    K: float = 100.0
    delta_bar: float = 1.0

    def __post_init__(self):
        if len(self.bubbles) < 1:
            raise ValueError("need at least one bubble")
        if self.alpha <= 1:
            raise ValueError("alpha must exceed 1")
        if self.K <= 0 or self.delta_bar <= 0:
            raise ValueError("K and delta_bar must be positive")
        object.__setattr__(self, "bubbles", tuple(self.bubbles))

    @property
    def k(self):
        return len(self.bubbles)

    def to_json(self):
        return json.dumps({
            "delta": [b.delta for b in self.bubbles],
            "center": [np.asarray(b.center).tolist() for b in self.bubbles],
            "alpha": self.alpha,
            "K": self.K,
            "delta_bar": self.delta_bar,
        })

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        bubbles = tuple(BubbleParams(delta=d, center=np.asarray(c, dtype=float))
                        for d, c in zip(data["delta"], data["center"]))
        return cls(bubbles=bubbles, alpha=data["alpha"], K=data["K"],
                   delta_bar=data["delta_bar"])


class ScalarField:
    """A scalar field on a model: a values callable plus optional gradient."""

    def __init__(self, model, fn, grad=None):
        self.model = model
        self._fn = fn
        self._grad = grad

    def __call__(self, pts):
        return self._fn(np.asarray(pts, dtype=float))

    @property
    def has_gradient(self):
        return self._grad is not None

    def grad(self, pts):
        if self._grad is None:
            raise ValueError("field has no gradient callable")
        return self._grad(np.asarray(pts, dtype=float))


def _profile(n, delta, d):
    """Flat extremal profile and its first two radial derivatives."""
    m = (n - 2) / 2.0
    s = math.sqrt(n * (n - 2)) * delta
    den = delta**2 + d**2
    B = (s / den) ** m
    B1 = B * (-2.0 * m * d / den)
    B2 = B * (4.0 * m * (m + 1) * d**2 / den**2 - 2.0 * m / den)
    return B, B1, B2


class BubbleField(ScalarField):
    """One cutoff bubble, with analytic gradient and radial Laplacian."""

    def __init__(self, model, params, cutoff):
        if math.isfinite(cutoff.r0) and cutoff.r0 >= model.injectivity_radius:
            raise ValueError("cutoff radius must stay below the injectivity radius")
        self.model = model
        self.params = params
        self.cutoff = cutoff

    def _radial(self, pts, derivatives=0):
        d = self.model.distance(pts, self.params.center)
        chi = self.cutoff.value(d)
        B, B1, B2 = _profile(self.model.n, self.params.delta, d)
        w = chi * B
        if derivatives == 0:
            return d, w, None, None
        c1 = self.cutoff.d1(d)
        w1 = c1 * B + chi * B1
        if derivatives == 1:
            return d, w, w1, None
        c2 = self.cutoff.d2(d)
        w2 = c2 * B + 2.0 * c1 * B1 + chi * B2
        return d, w, w1, w2

    def _lam(self, pts):
        lam = self.params.conformal_factor
        return 1.0 if lam is None else lam(pts)

    def __call__(self, pts):
        pts = np.asarray(pts, dtype=float)
        _, w, _, _ = self._radial(pts)
        return self._lam(pts) * w

    @property
    def has_gradient(self):
        return True

    def grad(self, pts):
        pts = np.asarray(pts, dtype=float)
        _, _, w1, _ = self._radial(pts, derivatives=1)
        direction = self.model.distance_gradient(self.params.center, pts)
        g = w1[..., None] * direction
        if self.params.conformal_factor is not None:
            g = g * np.asarray(self._lam(pts))[..., None]
        return g

    def laplace_beltrami(self, pts):
        """Geometer's Laplacian (-div grad) of the bubble field.

        Only exact for the default conformal factor; a user-supplied factor
        would contribute extra terms that are not modeled here.
        """
        pts = np.asarray(pts, dtype=float)
        d, w, w1, w2 = self._radial(pts, derivatives=2)
        coeff = self.model.radial_laplacian_coeff(self.params.center, pts, d=d)
        # at the center the slope vanishes like w''(0) d; the limit of the
        # full expression is n * w''(0)
        near = d < 1e-12
        lap = w2 + coeff * w1
        if np.any(near):
            lap = np.where(near, self.model.n * w2, lap)
        return -lap


class SumField(ScalarField):
    """Pointwise sum of fields sharing a model."""

    def __init__(self, fields):
        fields = list(fields)
        self.model = fields[0].model
        self.fields = fields

    def __call__(self, pts):
        pts = np.asarray(pts, dtype=float)
        out = self.fields[0](pts)
        for f in self.fields[1:]:
            out = out + f(pts)
        return out

    @property
    def has_gradient(self):
        return all(f.has_gradient for f in self.fields)

    def grad(self, pts):
        pts = np.asarray(pts, dtype=float)
        out = self.fields[0].grad(pts)
        for f in self.fields[1:]:
            out = out + f.grad(pts)
        return out

    def laplace_beltrami(self, pts):
        out = self.fields[0].laplace_beltrami(pts)
        for f in self.fields[1:]:
            out = out + f.laplace_beltrami(pts)
        return out


def multi_bubble_field(model, cfg, cutoff):
    return SumField([BubbleField(model, b, cutoff) for b in cfg.bubbles])


def bubble_eval(model, params, cutoff, x):
    """Value of a single cutoff bubble at x (scalar or batch)."""
    return BubbleField(model, params, cutoff)(x)


def multi_bubble_eval(model, cfg, cutoff, x):
    """Value of the bubble-sum ansatz at x."""
    return multi_bubble_field(model, cfg, cutoff)(x)


def bubble_gradient(model, params, cutoff, x):
    """Ambient-embedded gradient of a single bubble at x."""
    return BubbleField(model, params, cutoff).grad(x)


def is_admissible(cfg, model=None):
    """Check the admissibility cone; returns (ok, list of violations).

    Pair separations need a model to measure distances; if the bubbles'
    centers are plain vectors on a flat model, pass the model explicitly.
    """
    violations = []
    deltas = [b.delta for b in cfg.bubbles]
    for i, d in enumerate(deltas):
        if not (0.0 < d < cfg.delta_bar):
            violations.append({
                "constraint": "scale_ceiling", "index": i,
                "margin": cfg.delta_bar - d})
    for i in range(len(deltas)):
        for j in range(i + 1, len(deltas)):
            ratio = deltas[i] / deltas[j]
            if not (1.0 / cfg.alpha < ratio < cfg.alpha):
                violations.append({
                    "constraint": "scale_ratio", "pair": (i, j),
                    "margin": min(ratio - 1.0 / cfg.alpha, cfg.alpha - ratio)})
            if model is not None:
                dij = float(model.distance(cfg.bubbles[i].center,
                                           cfg.bubbles[j].center))
            else:
                dij = float(np.linalg.norm(
                    np.asarray(cfg.bubbles[i].center)
                    - np.asarray(cfg.bubbles[j].center)))
            sep = dij**2 / (deltas[i] * deltas[j])
            if not (sep > cfg.K):
                violations.append({
                    "constraint": "separation", "pair": (i, j),
                    "margin": sep - cfg.K})
    return (len(violations) == 0), violations
