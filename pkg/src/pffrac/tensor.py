"""Plane-strain symmetric tensor kernel.

All strain-like quantities are plane-strain tensors: the out-of-plane
normal component is identically zero and carried implicitly, so a tensor
is fully described by ``(xx, yy, xy)``. Traces and deviators follow the
3D convention: ``dev = eps - (tr/3) I3`` has a nonzero ``zz`` entry
``-tr/3`` even though the strain itself has none. Norms are 3D Frobenius
norms including that ``zz`` deviator entry.

Everything here is a pure function of its inputs and safe to call from
any number of workers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Two in-plane eigenvalues closer than this (relative to their size) are
# treated as repeated; projectors then default to the coordinate axes.
EIG_DEGENERATE_RTOL = 1e-12


def macaulay(x: float, sign: str) -> float:
    """Positive or negative part of a scalar.

    ``sign`` is ``"plus"`` for max(x, 0) or ``"minus"`` for min(x, 0).
    The minus convention is chosen so that d/dx <x>_-^2 = 2 <x>_-.
    """
    if sign == "plus":
        return x if x > 0.0 else 0.0
    if sign == "minus":
        return x if x < 0.0 else 0.0
    raise ValueError(f"macaulay sign must be 'plus' or 'minus', got {sign!r}")


@dataclass(frozen=True)
class SymStrain:
    """Plane-strain symmetric tensor with components xx, yy, xy (tensorial shear)."""

    xx: float
    yy: float
    xy: float

    def trace(self) -> float:
        return self.xx + self.yy

    def dev(self) -> tuple[float, float, float, float]:
        """3D deviator components (dev_xx, dev_yy, dev_zz, dev_xy)."""
        third = self.trace() / 3.0
        return (self.xx - third, self.yy - third, -third, self.xy)

    def dev_norm2(self) -> float:
        """Squared Frobenius norm of the 3D deviator."""
        dxx, dyy, dzz, dxy = self.dev()
        return dxx * dxx + dyy * dyy + dzz * dzz + 2.0 * dxy * dxy

    def norm2(self) -> float:
        """Squared Frobenius norm (zz strain is zero)."""
        return self.xx**2 + self.yy**2 + 2.0 * self.xy**2

    def voigt(self) -> np.ndarray:
        """Engineering-shear Voigt vector (xx, yy, 2 xy)."""
        return np.array([self.xx, self.yy, 2.0 * self.xy])

    @staticmethod
    def from_voigt(e) -> "SymStrain":
        return SymStrain(float(e[0]), float(e[1]), 0.5 * float(e[2]))


def ddot(a: SymStrain, b: SymStrain) -> float:
    """Double contraction a : b (out-of-plane components vanish)."""
    return a.xx * b.xx + a.yy * b.yy + 2.0 * a.xy * b.xy


@dataclass(frozen=True)
class SpectralDecomposition:
    """Eigenpairs of a plane-strain tensor.

    The first two slots hold the in-plane pair sorted descending; the third
    slot always holds the out-of-plane eigenvalue, which is exactly zero,
    with projector z (x) z. Projectors are rank-one 3x3 arrays e_i (x) e_i.
    """

    eigenvalues: tuple[float, float, float]
    eigenprojectors: tuple[np.ndarray, np.ndarray, np.ndarray]

    def reconstruct(self) -> np.ndarray:
        out = np.zeros((3, 3))
        for lam, proj in zip(self.eigenvalues, self.eigenprojectors):
            out += lam * proj
        return out


def _inplane_eigenvectors(eps: SymStrain) -> tuple[np.ndarray, np.ndarray]:
    """Unit eigenvectors of the in-plane 2x2 block, descending eigenvalue order.

    Sign convention: first nonzero component positive, so results are
    deterministic across platforms.
    """
    half_diff = 0.5 * (eps.xx - eps.yy)
    radius = float(np.hypot(half_diff, eps.xy))
    lam1 = 0.5 * (eps.xx + eps.yy) + radius
    if 2.0 * radius < EIG_DEGENERATE_RTOL * (1.0 + abs(lam1) + abs(lam1 - 2.0 * radius)):
        return np.array([1.0, 0.0]), np.array([0.0, 1.0])
    # Pick the better conditioned column of (A - lam2 I) for the lam1 vector.
    if half_diff >= 0.0:
        v1 = np.array([half_diff + radius, eps.xy])
    else:
        v1 = np.array([eps.xy, radius - half_diff])
    v1 /= np.linalg.norm(v1)
    if v1[0] < 0.0 or (v1[0] == 0.0 and v1[1] < 0.0):
        v1 = -v1
    v2 = np.array([-v1[1], v1[0]])
    if v2[0] < 0.0 or (v2[0] == 0.0 and v2[1] < 0.0):
        v2 = -v2
    return v1, v2


def spectral_decompose(eps: SymStrain) -> SpectralDecomposition:
    """Closed-form eigendecomposition of a plane-strain tensor.

    Returns the two in-plane eigenpairs (descending) plus the out-of-plane
    pair (0, z (x) z). Reconstruction sum(lam_i P_i) matches the input to
    machine precision.
    """
    half_diff = 0.5 * (eps.xx - eps.yy)
    radius = float(np.hypot(half_diff, eps.xy))
    mean = 0.5 * (eps.xx + eps.yy)
    lam1, lam2 = mean + radius, mean - radius
    v1, v2 = _inplane_eigenvectors(eps)

    p1 = np.zeros((3, 3))
    p1[:2, :2] = np.outer(v1, v1)
    p2 = np.zeros((3, 3))
    p2[:2, :2] = np.outer(v2, v2)
    p3 = np.zeros((3, 3))
    p3[2, 2] = 1.0
    return SpectralDecomposition((lam1, lam2, 0.0), (p1, p2, p3))


def _signed_part(eps: SymStrain, sign: str) -> SymStrain:
    dec = spectral_decompose(eps)
    out = np.zeros((2, 2))
    for lam, proj in zip(dec.eigenvalues[:2], dec.eigenprojectors[:2]):
        out += macaulay(lam, sign) * proj[:2, :2]
    # The out-of-plane eigenvalue is zero, so both signed parts stay in plane.
    return SymStrain(out[0, 0], out[1, 1], out[0, 1])


def positive_part(eps: SymStrain) -> SymStrain:
    """Tensor built from the positive eigenvalues: sum <lam_i>_+ e_i (x) e_i."""
    return _signed_part(eps, "plus")


def negative_part(eps: SymStrain) -> SymStrain:
    """Tensor built from the negative eigenvalues: sum <lam_i>_- e_i (x) e_i."""
    return _signed_part(eps, "minus")


# ---------------------------------------------------------------------------
# Batched helpers on Voigt arrays (used by the constitutive layer and the
# element loops; scalar API above is the reference implementation).
# ---------------------------------------------------------------------------

def eig2_batch(e: np.ndarray):
    """In-plane eigenvalues and rotation of Voigt strains, batched.

    ``e`` has shape (..., 3) with engineering shear. Returns
    ``(lam1, lam2, cos2t, sin2t)`` where lam1 >= lam2 and (cos2t, sin2t)
    is the doubled-angle direction of the lam1 eigenvector. Degenerate
    points fall back to the coordinate axes (cos2t=1, sin2t=0).
    """
    exx, eyy, exy = e[..., 0], e[..., 1], 0.5 * e[..., 2]
    mean = 0.5 * (exx + eyy)
    half_diff = 0.5 * (exx - eyy)
    radius = np.hypot(half_diff, exy)
    lam1 = mean + radius
    lam2 = mean - radius
    degenerate = 2.0 * radius < EIG_DEGENERATE_RTOL * (1.0 + np.abs(lam1) + np.abs(lam2))
    safe_r = np.where(degenerate, 1.0, radius)
    cos2t = np.where(degenerate, 1.0, half_diff / safe_r)
    sin2t = np.where(degenerate, 0.0, exy / safe_r)
    return lam1, lam2, cos2t, sin2t
