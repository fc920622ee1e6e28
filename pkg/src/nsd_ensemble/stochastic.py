"""Random conductivity samples, ensemble-mean inputs and output statistics.

Random numbers come from numpy's ``Philox`` counter-based bit generator
(4x64, 10 rounds) seeded with the run seed, so a (kind, parameters, seed, J)
tuple reproduces the same sample set on any platform numpy supports.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import NonSPDConductivityError, SpaceMismatchError

KINDS = ("uniform-isotropic", "listed-isotropic", "tensor-callable")


class IsotropicConductivity:
    """Spatially constant ``K = k I``; callable on (n, 2) points."""

    def __init__(self, k):
        k = float(k)
        if not k > 0:
            raise NonSPDConductivityError(f"isotropic conductivity must be positive, got {k}")
        self.k = k

    def __call__(self, xy):
        n = len(np.asarray(xy))
        return np.broadcast_to(self.k * np.eye(2), (n, 2, 2))

    def __repr__(self):
        return f"IsotropicConductivity({self.k!r})"


class CallableConductivity:
    """``K(x) = fn(x, omega)`` for a tensor callable and one random draw."""

    def __init__(self, fn, omega):
        self.fn = fn
        self.omega = float(omega)

    def __call__(self, xy):
        return np.asarray(self.fn(np.asarray(xy), self.omega), dtype=float)


@dataclass(frozen=True)
class ConductivitySpec:
    """How to draw the ensemble of conductivities.

    uniform-isotropic : k_j = (1 + omega_j) * scale, omega_j ~ U(0, 1)
    listed-isotropic  : k_j = values[j]
    tensor-callable   : K_j(x) = fn(x, omega_j), omega_j ~ U(0, 1)
    """
    kind: str = "uniform-isotropic"
    scale: float = 1e-2
    values: tuple = ()
    fn: object = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown conductivity kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "uniform-isotropic" and not self.scale > 0:
            raise ValueError("scale must be positive")
        if self.kind == "listed-isotropic" and not len(self.values):
            raise ValueError("listed-isotropic needs a non-empty list of values")
        if self.kind == "tensor-callable" and not callable(self.fn):
            raise ValueError("tensor-callable needs a callable fn(x, omega)")


def rng(seed):
    return np.random.Generator(np.random.Philox(seed))


def sample_conductivities(spec, J, seed=0):
    """Draw ``J`` conductivity callables; deterministic in ``seed``."""
    if J < 1:
        raise ValueError("J must be >= 1")
    if spec.kind == "listed-isotropic":
        if len(spec.values) != J:
            raise ValueError(f"listed conductivities have length {len(spec.values)}, J={J}")
        return [IsotropicConductivity(k) for k in spec.values]
    omega = rng(seed).random(J)
    if spec.kind == "uniform-isotropic":
        return [IsotropicConductivity((1.0 + w) * spec.scale) for w in omega]
    return [CallableConductivity(spec.fn, w) for w in omega]


def mean_fields(Kq, eta_q):
    """Pointwise ensemble means of sampled conductivities and BJS coefficients.

    ``Kq`` is (J, ..., 2, 2) and ``eta_q`` is (J, ...). The slip mean is the
    mean of the per-realization coefficients, not the coefficient of the
    mean conductivity.
    """
    Kq = np.asarray(Kq, dtype=float)
    eta_q = np.asarray(eta_q, dtype=float)
    if len(Kq) == 1:
        return Kq[0].copy(), eta_q[0].copy()
    return Kq.mean(axis=0), eta_q.mean(axis=0)


def ensemble_stats(fields):
    """Coefficient-wise sample mean and unbiased (J-1) variance."""
    try:
        F = np.asarray(fields, dtype=float)
    except ValueError as exc:
        raise SpaceMismatchError("fields do not share a common shape") from exc
    if F.dtype == object or F.ndim < 2:
        raise SpaceMismatchError("fields do not share a common shape")
    mean = F.mean(axis=0)
    if len(F) < 2:
        return mean, np.zeros_like(mean)
    return mean, F.var(axis=0, ddof=1)
