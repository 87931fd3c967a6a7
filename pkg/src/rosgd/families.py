"""Finite loss families with certified constants.

The only structure implemented is the quadratic family

    f(w; z) = 1/2 lam ||w||^2 + 1/2 c_z w'Bw + a_z'w + offset

with a fixed symmetric ``B`` of spectral norm one and coefficients ``c_z``
summing to zero, so the average Hessian is exactly ``lam * I`` while the
individual Hessians ``lam*I + c_z*B`` may be indefinite.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .domain import Ball, Box, Domain, as_point, domain_from_dict, euclidean_ball
from .rng import GENERATOR_VERSION, derive_rng

# c_z magnitude is nonconvexity * (1 + NONCONVEX_MARGIN) * lam, so individual
# Hessians become indefinite once nonconvexity > 1 / (1 + NONCONVEX_MARGIN).
NONCONVEX_MARGIN = 0.1
CERT_TOL = 1e-9
FORMAT_VERSION = 1


class CertificationError(ValueError):
    """A family's stored constants disagree with the recomputed ones."""


@dataclass(frozen=True)
class Constants:
    G: float
    beta: float
    lam: float

    @property
    def kappa(self) -> float:
        return self.beta / self.lam if self.lam > 0 else math.inf

    def to_dict(self) -> dict:
        kappa = self.kappa
        return {
            "G": self.G,
            "beta": self.beta,
            "lambda": self.lam,
            "kappa": None if math.isinf(kappa) else kappa,
        }


@dataclass(frozen=True, eq=False)
class Regularization:
    alpha: float
    center: np.ndarray


@dataclass(frozen=True, eq=False)
class QuadraticFamily:
    """T quadratic losses over ``domain``.

    ``lam`` is the identity coefficient shared by every component (it
    includes any L2 regularisation), ``c`` and ``A`` hold the per-datapoint
    payloads.
    """

    domain: Domain
    B: np.ndarray
    lam: float
    c: np.ndarray
    A: np.ndarray
    constants: Constants
    offset: float = 0.0
    regularization: Regularization | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("B", "c", "A"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        d = self.domain.dimension
        if self.B.shape != (d, d):
            raise ValueError("B must be d x d")
        if self.A.shape != (self.T, d):
            raise ValueError("A must have shape (T, d)")
        if self.T < 1:
            raise ValueError("family needs at least one datapoint")

    @property
    def T(self) -> int:
        return self.c.shape[0]

    @property
    def dimension(self) -> int:
        return self.domain.dimension

    @property
    def G(self) -> float:
        return self.constants.G

    @property
    def beta(self) -> float:
        return self.constants.beta

    @property
    def strong_convexity(self) -> float:
        return self.constants.lam

    @property
    def kappa(self) -> float:
        return self.constants.kappa

    @property
    def D(self) -> float:
        return self.domain.diameter()

    @property
    def mean_linear(self) -> np.ndarray:
        return self.A.mean(axis=0)

    def _check(self, w) -> np.ndarray:
        w = as_point(w, self.dimension)
        if not self.domain.contains(w, tol=1e-9):
            raise ValueError("point lies outside the feasible set")
        return w

    def _check_index(self, z: int) -> int:
        z = int(z)
        if not 0 <= z < self.T:
            raise IndexError(f"datapoint index {z} out of range [0, {self.T})")
        return z

    # Vectorised evaluators used by the runners; no feasibility checks.
    def values_rows(self, W: np.ndarray, idx: np.ndarray) -> np.ndarray:
        BW = W @ self.B.T
        return (
            0.5 * self.lam * np.einsum("ij,ij->i", W, W)
            + 0.5 * self.c[idx] * np.einsum("ij,ij->i", W, BW)
            + np.einsum("ij,ij->i", self.A[idx], W)
            + self.offset
        )

    def population_rows(self, W: np.ndarray) -> np.ndarray:
        BW = W @ self.B.T
        return (
            0.5 * self.lam * np.einsum("ij,ij->i", W, W)
            + 0.5 * self.c.mean() * np.einsum("ij,ij->i", W, BW)
            + W @ self.mean_linear
            + self.offset
        )

    def kernel_args(self) -> tuple:
        return self.B, self.lam, self.c, self.A


def loss_value(family: QuadraticFamily, w, z: int) -> float:
    """``f(w; z)``."""
    w = family._check(w)
    z = family._check_index(z)
    return float(
        0.5 * family.lam * (w @ w)
        + 0.5 * family.c[z] * (w @ family.B @ w)
        + family.A[z] @ w
        + family.offset
    )


def loss_gradient(family: QuadraticFamily, w, z: int) -> np.ndarray:
    """``grad f(w; z) = H_z w + a_z``."""
    w = family._check(w)
    z = family._check_index(z)
    return family.lam * w + family.c[z] * (family.B @ w) + family.A[z]


def population_value(family: QuadraticFamily, w) -> float:
    """Average loss ``F(w)``."""
    w = family._check(w)
    return float(
        0.5 * family.lam * (w @ w)
        + 0.5 * family.c.mean() * (w @ family.B @ w)
        + family.mean_linear @ w
        + family.offset
    )


def population_gradient(family: QuadraticFamily, w) -> np.ndarray:
    w = family._check(w)
    return family.lam * w + family.c.mean() * (family.B @ w) + family.mean_linear


def component_hessian(family: QuadraticFamily, z: int) -> np.ndarray:
    return family.lam * np.eye(family.dimension) + family.c[z] * family.B


def min_component_eigenvalue(family: QuadraticFamily) -> float:
    """Smallest eigenvalue over all component Hessians."""
    return min(
        float(np.linalg.eigvalsh(family.lam * np.eye(family.dimension) + cz * family.B)[0])
        for cz in np.unique(family.c)
    )


def _recompute(family: QuadraticFamily) -> Constants:
    d = family.dimension
    eye = np.eye(d)
    beta = max(
        float(np.max(np.abs(np.linalg.eigvalsh(family.lam * eye + cz * family.B))))
        for cz in np.unique(family.c)
    )
    avg_hessian = family.lam * eye + family.c.mean() * family.B
    lam = float(np.linalg.eigvalsh(0.5 * (avg_hessian + avg_hessian.T))[0])
    reg = family.regularization
    if reg is None:
        G = beta * family.domain.max_norm() + float(np.max(np.linalg.norm(family.A, axis=1)))
    else:
        base_A = family.A + reg.alpha * reg.center
        base_G = (beta - reg.alpha) * family.domain.max_norm() + float(
            np.max(np.linalg.norm(base_A, axis=1))
        )
        G = base_G + reg.alpha * family.domain.diameter()
    return Constants(G=G, beta=beta, lam=lam)


def certify_constants(family: QuadraticFamily) -> dict:
    """Recompute G, beta, lambda from first principles and compare.

    Raises :class:`CertificationError` if any stored constant is off by
    more than ``1e-9``.
    """
    cert = _recompute(family)
    stored = family.constants
    for name, got, want in (
        ("G", cert.G, stored.G),
        ("beta", cert.beta, stored.beta),
        ("lambda", cert.lam, stored.lam),
    ):
        if not abs(got - want) <= CERT_TOL * max(1.0, abs(want)):
            raise CertificationError(
                f"constant {name} mismatch: stored {want!r}, recomputed {got!r}"
            )
    if stored.lam < 0:
        raise CertificationError(f"average loss is not convex (lambda={stored.lam!r})")
    if stored.lam > 0 and stored.kappa < 1 - CERT_TOL:
        raise CertificationError(f"kappa={stored.kappa!r} < 1")
    out = cert.to_dict()
    out["min_component_eigenvalue"] = min_component_eigenvalue(family)
    return out


def _spectral_unit_matrix(rng: np.random.Generator, d: int) -> np.ndarray:
    M = rng.standard_normal((d, d))
    S = 0.5 * (M + M.T)
    return S / np.max(np.abs(np.linalg.eigvalsh(S)))


def _balanced_coefficients(rng: np.random.Generator, T: int, scale: float) -> np.ndarray:
    base = np.zeros(T)
    half = T // 2
    base[:half] = scale
    base[half : 2 * half] = -scale
    perm = kernels.fisher_yates(rng.random(T - 1))
    return base[perm]


def _sphere(rng: np.random.Generator, n: int, d: int, radius: float) -> np.ndarray:
    X = rng.standard_normal((n, d))
    return radius * X / np.linalg.norm(X, axis=1, keepdims=True)


def _half_domain(domain: Domain) -> Domain:
    if isinstance(domain, Ball):
        return Ball(domain.center, 0.5 * domain.radius)
    mid = domain.midpoint
    return Box(mid + 0.5 * (domain.lower - mid), mid + 0.5 * (domain.upper - mid))


def _stored_constants(domain: Domain, lam: float, c: np.ndarray, A: np.ndarray) -> Constants:
    beta = lam + float(np.max(np.abs(c)))
    G = beta * domain.max_norm() + float(np.max(np.linalg.norm(A, axis=1)))
    return Constants(G=G, beta=beta, lam=lam)


def generate_quadratic_family(
    dimension: int,
    T: int,
    lam: float,
    nonconvexity: float,
    seed: int,
    *,
    a_norm: float = 1.0,
    domain: Domain | None = None,
    interior_minimizer: bool = True,
) -> QuadraticFamily:
    """Random cumulatively ``lam``-strongly convex quadratic family.

    ``B`` depends only on ``(seed, dimension)`` so families generated for
    different ``T`` share it.  With ``interior_minimizer`` the common linear
    term is shifted, if needed, so that ``-mean(a)/lam`` lies in the
    half-size copy of the domain.
    """
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    if T < 2:
        raise ValueError(f"T must be >= 2, got {T}")
    if dimension < 1:
        raise ValueError("dimension must be >= 1")
    if not 0 <= nonconvexity <= 1:
        raise ValueError("nonconvexity must lie in [0, 1]")
    domain = euclidean_ball(dimension) if domain is None else domain
    if domain.dimension != dimension:
        raise ValueError("domain dimension does not match")

    B = _spectral_unit_matrix(derive_rng(seed, "family/B", dimension), dimension)
    c = _balanced_coefficients(
        derive_rng(seed, "family/c", T), T, nonconvexity * (1.0 + NONCONVEX_MARGIN) * lam
    )
    A = _sphere(derive_rng(seed, "family/a", T, dimension), T, dimension, a_norm)
    if interior_minimizer:
        abar = A.mean(axis=0)
        target = -abar / lam
        inner = _half_domain(domain)
        if not inner.contains(target, tol=0.0):
            A = A + (-lam * inner.project(target) - abar)

    family = QuadraticFamily(
        domain=domain,
        B=B,
        lam=lam,
        c=c,
        A=A,
        constants=_stored_constants(domain, lam, c, A),
        meta={
            "structure": "quadratic",
            "seed": int(seed),
            "nonconvexity": float(nonconvexity),
            "a_norm": float(a_norm),
            "interior_minimizer": bool(interior_minimizer),
            "generator": GENERATOR_VERSION,
        },
    )
    certify_constants(family)
    return family


def generate_convex_family(
    dimension: int,
    T: int,
    seed: int,
    *,
    curvature: float = 1.0,
    a_norm: float = 1.0,
    mean_norm: float = 0.5,
    domain: Domain | None = None,
) -> QuadraticFamily:
    """Family whose average is linear (convex, lambda = 0).

    Components are ``1/2 c_z w'Bw + a_z'w`` with ``c_z = +-curvature``; the
    linear terms are shifted so that ``mean(a)`` has norm ``mean_norm``.
    """
    if T < 2:
        raise ValueError(f"T must be >= 2, got {T}")
    if not curvature > 0:
        raise ValueError("curvature must be positive")
    domain = euclidean_ball(dimension) if domain is None else domain
    B = _spectral_unit_matrix(derive_rng(seed, "family/B", dimension), dimension)
    c = _balanced_coefficients(derive_rng(seed, "convex/c", T), T, curvature)
    rng = derive_rng(seed, "convex/a", T, dimension)
    A = _sphere(rng, T, dimension, a_norm)
    direction = _sphere(rng, 1, dimension, 1.0)[0]
    A = A - A.mean(axis=0) + mean_norm * direction
    family = QuadraticFamily(
        domain=domain,
        B=B,
        lam=0.0,
        c=c,
        A=A,
        constants=_stored_constants(domain, 0.0, c, A),
        meta={
            "structure": "quadratic-convex",
            "seed": int(seed),
            "curvature": float(curvature),
            "a_norm": float(a_norm),
            "mean_norm": float(mean_norm),
            "generator": GENERATOR_VERSION,
        },
    )
    certify_constants(family)
    return family


def identical_family(domain: Domain, T: int, lam: float = 1.0, a=None) -> QuadraticFamily:
    """T copies of ``1/2 lam ||w||^2 + a'w``: every sampler sees the same loss."""
    d = domain.dimension
    a = np.zeros(d) if a is None else as_point(a, d)
    A = np.tile(a, (T, 1))
    c = np.zeros(T)
    return QuadraticFamily(
        domain=domain,
        B=np.eye(d),
        lam=lam,
        c=c,
        A=A,
        constants=_stored_constants(domain, lam, c, A),
        meta={"structure": "quadratic-identical"},
    )


def sign_correlated_family(family: QuadraticFamily, shift: float = 1.0, direction=None) -> QuadraticFamily:
    """Copy of ``family`` with ``a_z += sign(c_z) * shift * u``.

    The balanced signs leave the average (and ``w*``) unchanged, but a
    stream sorted by ``c_z`` now has a biased tail: late rounds all pull
    towards the same side.  Used for the worst-case ordering diagnostic.
    """
    if family.regularization is not None:
        raise ValueError("apply before regularizing")
    d = family.dimension
    u = np.ones(d) / np.sqrt(d) if direction is None else as_point(direction, d)
    u = u / np.linalg.norm(u)
    A = family.A + np.sign(family.c)[:, None] * (shift * u)
    out = QuadraticFamily(
        domain=family.domain,
        B=family.B,
        lam=family.lam,
        c=family.c,
        A=A,
        constants=_stored_constants(family.domain, family.lam, family.c, A),
        offset=family.offset,
        meta=dict(family.meta, structure="quadratic-sign-correlated", shift=float(shift)),
    )
    certify_constants(out)
    return out


def regularize(family: QuadraticFamily, alpha: float, w0=None) -> QuadraticFamily:
    """Family of ``f(w; z) + alpha/2 ||w - w0||^2``.

    Constants become ``lambda + alpha``, ``beta + alpha`` and ``G + alpha*D``.
    """
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if family.regularization is not None:
        raise ValueError("family is already regularized")
    w0 = family.domain.midpoint if w0 is None else family._check(w0)
    k = family.constants
    return QuadraticFamily(
        domain=family.domain,
        B=family.B,
        lam=family.lam + alpha,
        c=family.c,
        A=family.A - alpha * w0,
        constants=Constants(G=k.G + alpha * family.D, beta=k.beta + alpha, lam=k.lam + alpha),
        offset=family.offset + 0.5 * alpha * float(w0 @ w0),
        regularization=Regularization(alpha=float(alpha), center=w0.copy()),
        meta=dict(family.meta, regularized=True),
    )


def family_to_dict(family: QuadraticFamily) -> dict:
    reg = family.regularization
    return {
        "format_version": FORMAT_VERSION,
        "structure": family.meta.get("structure", "quadratic"),
        "dimension": family.dimension,
        "T": family.T,
        "domain": family.domain.to_dict(),
        "lam_coefficient": family.lam,
        "B": family.B.tolist(),
        "c": family.c.tolist(),
        "a": family.A.tolist(),
        "offset": family.offset,
        "regularization": None
        if reg is None
        else {"alpha": reg.alpha, "center": reg.center.tolist()},
        "constants": family.constants.to_dict(),
        "min_component_eigenvalue": min_component_eigenvalue(family),
        "meta": family.meta,
    }


def family_from_dict(d: dict) -> QuadraticFamily:
    if d.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported family format {d.get('format_version')!r}")
    k = d["constants"]
    reg = d.get("regularization")
    family = QuadraticFamily(
        domain=domain_from_dict(d["domain"]),
        B=np.asarray(d["B"], dtype=np.float64),
        lam=float(d["lam_coefficient"]),
        c=np.asarray(d["c"], dtype=np.float64),
        A=np.asarray(d["a"], dtype=np.float64),
        constants=Constants(G=k["G"], beta=k["beta"], lam=k["lambda"]),
        offset=float(d.get("offset", 0.0)),
        regularization=None
        if reg is None
        else Regularization(alpha=reg["alpha"], center=np.asarray(reg["center"])),
        meta=d.get("meta", {}),
    )
    certify_constants(family)
    return family


def dumps(family: QuadraticFamily) -> str:
    return json.dumps(family_to_dict(family), sort_keys=True, indent=1) + "\n"


def loads(text: str) -> QuadraticFamily:
    return family_from_dict(json.loads(text))


def save(family: QuadraticFamily, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(family))


def load(path) -> QuadraticFamily:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())
