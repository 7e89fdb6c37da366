"""Diagonal Gaussian / Student-t components and finite mixtures over them."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, logsumexp

from .targets import LOG_2PI

SCALE_FLOOR = 1e-8
KINDS = ("gaussian", "student_t")


def as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True, eq=False)
class Component:
    """One mixture component.

    ``root_scale`` may carry either sign; the per-dimension std is
    ``max(|root_scale|, SCALE_FLOOR)``. ``nu`` is required for Student-t.
    """

    mean: np.ndarray
    root_scale: np.ndarray
    kind: str = "gaussian"
    nu: float | None = None

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float)).copy()
        rs = np.atleast_1d(np.asarray(self.root_scale, dtype=float)).copy()
        if mean.shape != rs.shape or mean.ndim != 1:
            raise ValueError("mean and root_scale must be vectors of equal length")
        if not np.all(np.isfinite(mean)) or not np.all(np.isfinite(rs)):
            raise ValueError("component parameters must be finite")
        if self.kind not in KINDS:
            raise ValueError(f"unknown component kind {self.kind!r}")
        if self.kind == "student_t" and (self.nu is None or self.nu <= 0):
            raise ValueError("student_t components need nu > 0")
        mean.setflags(write=False)
        rs.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "root_scale", rs)

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def std(self) -> np.ndarray:
        return np.maximum(np.abs(self.root_scale), SCALE_FLOOR)

    def log_pdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ValueError(f"point dimension {x.shape[-1]} does not match component dimension {self.dim}")
        s = self.std
        z = (x - self.mean) / s
        if self.kind == "gaussian":
            return np.sum(-0.5 * LOG_2PI - np.log(s) - 0.5 * z * z, axis=-1)
        nu = self.nu
        c = gammaln(0.5 * (nu + 1)) - gammaln(0.5 * nu) - 0.5 * np.log(nu * np.pi)
        return np.sum(c - np.log(s) - 0.5 * (nu + 1) * np.log1p(z * z / nu), axis=-1)

    def score_params(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Gradients of ``log_pdf`` w.r.t. ``mean`` and ``root_scale`` at each row of ``x``."""
        x = np.atleast_2d(x)
        r = x - self.mean
        s = self.root_scale
        s = np.where(np.abs(s) < SCALE_FLOOR, np.copysign(SCALE_FLOOR, s + (s == 0)), s)
        if self.kind == "gaussian":
            return r / s**2, r * r / s**3 - 1.0 / s
        nu = self.nu
        den = nu * s * s + r * r
        return (nu + 1) * r / den, (nu + 1) * r * r / (s * den) - 1.0 / s

    def grad_x(self, x) -> np.ndarray:
        """Gradient of ``log_pdf`` w.r.t. the point."""
        return -self.score_params(x)[0]

    def standard_draws(self, shape, rng) -> np.ndarray:
        rng = as_rng(rng)
        if self.kind == "gaussian":
            return rng.standard_normal(shape)
        return rng.standard_t(self.nu, shape)

    def log_pdf_standard(self, eps) -> np.ndarray:
        """Log-density of the unscaled noise ``eps`` (location 0, scale 1)."""
        return Component(np.zeros(self.dim), np.ones(self.dim), self.kind, self.nu).log_pdf(eps)

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "mean": self.mean.tolist(), "root_scale": self.root_scale.tolist()}
        if self.nu is not None:
            d["nu"] = float(self.nu)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> Component:
        return cls(np.asarray(d["mean"], float), np.asarray(d["root_scale"], float), d.get("kind", "gaussian"), d.get("nu"))


def component_log_pdf(c: Component, theta):
    return c.log_pdf(theta)


@dataclass(frozen=True, eq=False)
class MixtureProposal:
    components: tuple
    weights: np.ndarray

    def __post_init__(self):
        comps = tuple(self.components)
        w = np.atleast_1d(np.asarray(self.weights, dtype=float)).copy()
        if not comps:
            raise ValueError("a mixture needs at least one component")
        if w.shape != (len(comps),):
            raise ValueError("one weight per component is required")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must lie on the simplex, got {w}")
        if len({c.dim for c in comps}) != 1:
            raise ValueError("all components must share one dimension")
        w.setflags(write=False)
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "weights", w)

    @classmethod
    def single(cls, component: Component) -> MixtureProposal:
        return cls((component,), np.ones(1))

    @property
    def dim(self) -> int:
        return self.components[0].dim

    @property
    def k(self) -> int:
        return len(self.components)

    def component_log_pdfs(self, x) -> np.ndarray:
        """Shape ``(k, ...)``: log-density of every component at ``x``."""
        return np.stack([c.log_pdf(x) for c in self.components])

    def log_pdf(self, x, weights=None) -> np.ndarray:
        w = self.weights if weights is None else np.asarray(weights, dtype=float)
        keep = w > 0
        logs = np.stack([c.log_pdf(x) for c, k in zip(self.components, keep) if k])
        lw = np.log(w[keep]).reshape((-1,) + (1,) * (logs.ndim - 1))
        return logsumexp(logs + lw, axis=0)

    def grad_x(self, x) -> np.ndarray:
        """Gradient of ``log q`` w.r.t. ``x``; ``x`` has shape ``(n, d)``."""
        x = np.atleast_2d(x)
        keep = self.weights > 0
        comps = [c for c, k in zip(self.components, keep) if k]
        logs = np.stack([c.log_pdf(x) for c in comps]) + np.log(self.weights[keep])[:, None]
        resp = np.exp(logs - logsumexp(logs, axis=0))
        return sum(r[:, None] * c.grad_x(x) for r, c in zip(resp, comps))

    def sample_points(self, n: int, rng) -> np.ndarray:
        rng = as_rng(rng)
        idx = rng.choice(self.k, size=n, p=self.weights)
        out = np.empty((n, self.dim))
        for j, c in enumerate(self.components):
            sel = idx == j
            m = int(sel.sum())
            if m:
                out[sel] = c.mean + c.std * c.standard_draws((m, self.dim), rng)
        return out

    def to_dict(self) -> dict:
        return {"dim": self.dim, "components": [c.to_dict() for c in self.components], "weights": self.weights.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> MixtureProposal:
        q = cls(tuple(Component.from_dict(c) for c in d["components"]), np.asarray(d["weights"], float))
        if "dim" in d and int(d["dim"]) != q.dim:
            raise ValueError(f"declared dim {d['dim']} does not match components ({q.dim})")
        return q

    def to_json(self) -> str:
        # json emits repr() floats, which round-trip exactly
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> MixtureProposal:
        return cls.from_dict(json.loads(text))


def mixture_log_pdf(q: MixtureProposal, theta):
    return q.log_pdf(theta)


@dataclass
class WeightedBatch:
    """Draws from a proposal with cached log-densities.

    ``log_p`` and ``norm_weights`` stay ``None`` until the batch is scored
    against a target (see :func:`fklboost.snis.score_batch`).
    """

    points: np.ndarray
    log_q: np.ndarray
    seed: object = None
    log_p: np.ndarray | None = None
    norm_weights: np.ndarray | None = field(default=None, repr=False)

    def __len__(self):
        return self.points.shape[0]

    @property
    def complete(self) -> bool:
        return self.log_p is not None and self.norm_weights is not None


def sample(q: MixtureProposal, S: int, seed=None) -> WeightedBatch:
    if S < 1:
        raise ValueError("need at least one sample")
    pts = q.sample_points(S, as_rng(seed))
    return WeightedBatch(points=pts, log_q=q.log_pdf(pts), seed=seed if isinstance(seed, (int, np.integer)) else None)


def add_component(q: MixtureProposal, f: Component, gamma: float) -> MixtureProposal:
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    if f.dim != q.dim:
        raise ValueError("new component dimension does not match the mixture")
    w = np.append((1.0 - gamma) * q.weights, gamma)
    return MixtureProposal(q.components + (f,), w / w.sum())
