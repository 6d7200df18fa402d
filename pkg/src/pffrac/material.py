"""Pointwise constitutive layer: degradation, dissipation, and energy splits.

The elastic energy density is partitioned as ``psi = a(alpha) psi_D + psi_R``
with ``psi_D + psi_R = psi0``, where ``psi0 = kappa0/2 tr^2 + mu0 |dev|^2``
is the pristine density. Only the degradable part drives damage. Splits:

``none``
    psi_D = psi0, psi_R = 0. The mechanical problem is then linear.
``voldev``
    Deviatoric plus tensile-volumetric energy degrades; the compressive
    volumetric part is residual.
``spectral``
    Built from the signed spectral parts of the strain.
``star-convex``
    Generalizes voldev with a parameter gamma_star >= -1 that trades
    compressive against tensile strength. gamma_star = 0 recovers voldev,
    gamma_star = -1 removes the decomposition entirely.
``no-tension`` / ``dp-like``
    psi_R is the minimum of psi0(eps - eta) over a convex cone of
    admissible tensors eta, solved numerically in eigenvalue coordinates.

Voigt convention throughout: strain (exx, eyy, 2 exy), stress
(sxx, syy, sxy); 3x3 tangents act on the engineering-shear strain vector.

Branch selection at nonsmooth points (tr = 0, zero eigenvalues) takes the
non-negative branch, so tangents are deterministic; the energy is C^1 and
residuals are unaffected.

All evaluations are pure and may run concurrently per quadrature point.
Scalar entry points validate their inputs; the batched ``split_arrays``
used by assembly skips bound checks because penalized Newton iterates may
transiently leave [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ConeProjectionError
from .tensor import SymStrain, eig2_batch

SPLITS = ("none", "voldev", "spectral", "star-convex", "no-tension", "dp-like")
CONE_SPLITS = ("no-tension", "dp-like")
DISSIPATIONS = ("AT1", "AT2")

# Inner cone minimization: projected-gradient stationarity tolerance
# (relative to strain scale) and iteration cap.
CONE_TOL = 1e-12
CONE_MAX_ITER = 200
# Central-difference step factor for cone-split tangents.
CONE_FD_STEP = 1e-7

_VOIGT_ID = np.array([1.0, 1.0, 0.0])
# Deviatoric projector in Voigt form (engineering shear column scaling).
_P_DEV = np.array([
    [2.0 / 3.0, -1.0 / 3.0, 0.0],
    [-1.0 / 3.0, 2.0 / 3.0, 0.0],
    [0.0, 0.0, 0.5],
])


def _check_alpha(alpha) -> None:
    a = np.asarray(alpha)
    if np.any(a < -1e-12) or np.any(a > 1.0 + 1e-12):
        raise ValueError(f"damage value outside [0, 1]: {alpha}")


def degradation(alpha, order: int = 0, a0: float = 1e-6):
    """Stiffness degradation (1 - alpha)^2 + a0 and its alpha-derivatives."""
    _check_alpha(alpha)
    if order == 0:
        return (1.0 - alpha) ** 2 + a0
    if order == 1:
        return -2.0 * (1.0 - alpha)
    if order == 2:
        return 2.0 * np.ones_like(np.asarray(alpha, dtype=float))
    raise ValueError(f"derivative order must be 0, 1 or 2, got {order}")


def dissipation(alpha, model: str = "AT1", order: int = 0):
    """Local dissipation w(alpha): linear for AT1, quadratic for AT2."""
    _check_alpha(alpha)
    if model == "AT1":
        if order == 0:
            return alpha
        if order == 1:
            return np.ones_like(np.asarray(alpha, dtype=float))
        if order == 2:
            return np.zeros_like(np.asarray(alpha, dtype=float))
    elif model == "AT2":
        if order == 0:
            return alpha**2
        if order == 1:
            return 2.0 * alpha
        if order == 2:
            return 2.0 * np.ones_like(np.asarray(alpha, dtype=float))
    else:
        raise ConfigError(f"unknown dissipation model {model!r} (use AT1 or AT2)")
    raise ValueError(f"derivative order must be 0, 1 or 2, got {order}")


@dataclass(frozen=True)
class MaterialModel:
    """Elastic constants, fracture parameters, and split selection.

    Units: E0 in MPa, Gc in N/mm, ell in mm; everything else dimensionless.
    """

    E0: float
    nu0: float
    Gc: float
    ell: float
    a0: float = 1e-6
    dissipation: str = "AT1"
    split: str = "voldev"
    gamma_star: float = 0.0
    gamma_dp: float = 0.0

    def __post_init__(self):
        if not (self.E0 > 0.0):
            raise ConfigError(f"E0 must be positive, got {self.E0}")
        if not (0.0 < self.nu0 < 0.5):
            raise ConfigError(f"nu0 must lie in (0, 0.5), got {self.nu0}")
        if not (self.Gc > 0.0):
            raise ConfigError(f"Gc must be positive, got {self.Gc}")
        if not (self.ell > 0.0):
            raise ConfigError(f"ell must be positive, got {self.ell}")
        if not (self.a0 > 0.0):
            raise ConfigError(f"a0 must be positive, got {self.a0}")
        if self.dissipation not in DISSIPATIONS:
            raise ConfigError(f"unknown dissipation {self.dissipation!r}")
        if self.split not in SPLITS:
            raise ConfigError(f"unknown split {self.split!r}; choose from {SPLITS}")
        if self.gamma_star < -1.0:
            raise ConfigError(f"gamma_star must be >= -1, got {self.gamma_star}")
        if self.gamma_dp < 0.0:
            raise ConfigError(f"gamma_dp must be >= 0, got {self.gamma_dp}")

    @property
    def mu0(self) -> float:
        return self.E0 / (2.0 * (1.0 + self.nu0))

    @property
    def lam0(self) -> float:
        return self.E0 * self.nu0 / ((1.0 + self.nu0) * (1.0 - 2.0 * self.nu0))

    @property
    def kappa0(self) -> float:
        return self.lam0 + 2.0 * self.mu0 / 3.0

    @property
    def c_w(self) -> float:
        return 8.0 / 3.0 if self.dissipation == "AT1" else 2.0

    def elastic_tangent(self) -> np.ndarray:
        """Undamaged plane-strain stiffness, 3x3 Voigt."""
        lam, mu = self.lam0, self.mu0
        return np.array([
            [lam + 2.0 * mu, lam, 0.0],
            [lam, lam + 2.0 * mu, 0.0],
            [0.0, 0.0, mu],
        ])

    def psi0(self, e: np.ndarray) -> np.ndarray:
        """Pristine energy density for Voigt strains of shape (..., 3)."""
        t = e[..., 0] + e[..., 1]
        exy = 0.5 * e[..., 2]
        dev2 = ((e[..., 0] - t / 3.0) ** 2 + (e[..., 1] - t / 3.0) ** 2
                + (t / 3.0) ** 2 + 2.0 * exy**2)
        return 0.5 * self.kappa0 * t**2 + self.mu0 * dev2


@dataclass
class SplitEval:
    """Split energy densities with stresses and Voigt tangents at one point."""

    psi_D: float
    psi_R: float
    sigma_D: np.ndarray
    sigma_R: np.ndarray
    C_D: np.ndarray
    C_R: np.ndarray


@dataclass
class SplitBatch:
    """Batched split evaluation over Voigt strains of shape (..., 3)."""

    psi_d: np.ndarray
    psi_r: np.ndarray
    sig_d: np.ndarray | None = None
    sig_r: np.ndarray | None = None
    cc_d: np.ndarray | None = None
    cc_r: np.ndarray | None = None


def _heaviside(x: np.ndarray) -> np.ndarray:
    # Non-negative branch: H(0) = 1.
    return (x >= 0.0).astype(float)


def _none_batch(e: np.ndarray, m: MaterialModel, order: int) -> SplitBatch:
    shape = e.shape[:-1]
    out = SplitBatch(psi_d=m.psi0(e), psi_r=np.zeros(shape))
    if order >= 1:
        out.sig_d = e @ m.elastic_tangent().T
        out.sig_r = np.zeros_like(e)
    if order >= 2:
        out.cc_d = np.broadcast_to(m.elastic_tangent(), shape + (3, 3)).copy()
        out.cc_r = np.zeros(shape + (3, 3))
    return out


def _star_convex_batch(e: np.ndarray, m: MaterialModel, gs: float,
                       order: int) -> SplitBatch:
    t = e[..., 0] + e[..., 1]
    exy = 0.5 * e[..., 2]
    dxx = e[..., 0] - t / 3.0
    dyy = e[..., 1] - t / 3.0
    dev2 = dxx**2 + dyy**2 + (t / 3.0) ** 2 + 2.0 * exy**2
    t_pos = np.maximum(t, 0.0)
    t_neg = np.minimum(t, 0.0)
    k = m.kappa0

    out = SplitBatch(
        psi_d=m.mu0 * dev2 + 0.5 * k * (t_pos**2 - gs * t_neg**2),
        psi_r=(1.0 + gs) * 0.5 * k * t_neg**2,
    )
    if order >= 1:
        dev_sig = 2.0 * m.mu0 * np.stack([dxx, dyy, exy], axis=-1)
        vol_d = (k * (t_pos - gs * t_neg))[..., None] * _VOIGT_ID
        vol_r = ((1.0 + gs) * k * t_neg)[..., None] * _VOIGT_ID
        out.sig_d = dev_sig + vol_d
        out.sig_r = vol_r
    if order >= 2:
        h_pos = _heaviside(t)
        h_neg = 1.0 - h_pos
        jj = np.outer(_VOIGT_ID, _VOIGT_ID)
        out.cc_d = (2.0 * m.mu0 * _P_DEV
                    + (k * (h_pos - gs * h_neg))[..., None, None] * jj)
        out.cc_r = ((1.0 + gs) * k * h_neg)[..., None, None] * jj
    return out


def _voldev_batch(e: np.ndarray, m: MaterialModel, order: int) -> SplitBatch:
    # Written out separately from the star-convex path so that the two can
    # cross-check each other at gamma_star = 0.
    t = e[..., 0] + e[..., 1]
    exy = 0.5 * e[..., 2]
    dxx = e[..., 0] - t / 3.0
    dyy = e[..., 1] - t / 3.0
    dev2 = dxx**2 + dyy**2 + (t / 3.0) ** 2 + 2.0 * exy**2
    t_pos = np.maximum(t, 0.0)
    t_neg = np.minimum(t, 0.0)

    out = SplitBatch(
        psi_d=m.mu0 * dev2 + 0.5 * m.kappa0 * t_pos**2,
        psi_r=0.5 * m.kappa0 * t_neg**2,
    )
    if order >= 1:
        dev_sig = 2.0 * m.mu0 * np.stack([dxx, dyy, exy], axis=-1)
        out.sig_d = dev_sig + (m.kappa0 * t_pos)[..., None] * _VOIGT_ID
        out.sig_r = (m.kappa0 * t_neg)[..., None] * _VOIGT_ID
    if order >= 2:
        h_pos = _heaviside(t)
        jj = np.outer(_VOIGT_ID, _VOIGT_ID)
        out.cc_d = 2.0 * m.mu0 * _P_DEV + (m.kappa0 * h_pos)[..., None, None] * jj
        out.cc_r = (m.kappa0 * (1.0 - h_pos))[..., None, None] * jj
    return out


def _spectral_batch(e: np.ndarray, m: MaterialModel, order: int) -> SplitBatch:
    lam1, lam2, cos2t, sin2t = eig2_batch(e)
    t = e[..., 0] + e[..., 1]
    t_pos, t_neg = np.maximum(t, 0.0), np.minimum(t, 0.0)
    l1_pos, l2_pos = np.maximum(lam1, 0.0), np.maximum(lam2, 0.0)
    l1_neg, l2_neg = np.minimum(lam1, 0.0), np.minimum(lam2, 0.0)
    lam, mu = m.lam0, m.mu0

    out = SplitBatch(
        psi_d=0.5 * lam * t_pos**2 + mu * (l1_pos**2 + l2_pos**2),
        psi_r=0.5 * lam * t_neg**2 + mu * (l1_neg**2 + l2_neg**2),
    )
    if order == 0:
        return out

    # Voigt component vectors of the eigenprojectors and of the unit mixed
    # tensor; the out-of-plane eigenvalue is zero and never contributes.
    p1 = np.stack([0.5 * (1.0 + cos2t), 0.5 * (1.0 - cos2t), 0.5 * sin2t], axis=-1)
    p2 = np.stack([0.5 * (1.0 - cos2t), 0.5 * (1.0 + cos2t), -0.5 * sin2t], axis=-1)
    out.sig_d = ((lam * t_pos)[..., None] * _VOIGT_ID
                 + 2.0 * mu * (l1_pos[..., None] * p1 + l2_pos[..., None] * p2))
    out.sig_r = ((lam * t_neg)[..., None] * _VOIGT_ID
                 + 2.0 * mu * (l1_neg[..., None] * p1 + l2_neg[..., None] * p2))
    if order == 1:
        return out

    h1 = _heaviside(lam1)
    h2 = _heaviside(lam2)
    gap = lam1 - lam2
    tiny = gap < 1e-12 * (1.0 + np.abs(lam1) + np.abs(lam2))
    safe_gap = np.where(tiny, 1.0, gap)
    # Divided differences of the signed parts; at repeated eigenvalues the
    # derivative of the non-negative branch applies.
    s_pos = np.where(tiny, h1, (l1_pos - l2_pos) / safe_gap)
    s_neg = np.where(tiny, 1.0 - h1, (l1_neg - l2_neg) / safe_gap)

    m12 = np.stack([-sin2t, sin2t, cos2t], axis=-1) / np.sqrt(2.0)
    jj = np.outer(_VOIGT_ID, _VOIGT_ID)

    def rank1(v, w):
        return v[..., :, None] * w[..., None, :]

    ht = _heaviside(t)
    base_pos = (h1[..., None, None] * rank1(p1, p1)
                + h2[..., None, None] * rank1(p2, p2)
                + s_pos[..., None, None] * rank1(m12, m12))
    base_neg = ((1.0 - h1)[..., None, None] * rank1(p1, p1)
                + (1.0 - h2)[..., None, None] * rank1(p2, p2)
                + s_neg[..., None, None] * rank1(m12, m12))
    out.cc_d = (lam * ht)[..., None, None] * jj + 2.0 * mu * base_pos
    out.cc_r = (lam * (1.0 - ht))[..., None, None] * jj + 2.0 * mu * base_neg
    return out


# ---------------------------------------------------------------------------
# Cone splits (no-tension, DP-like): psi_R = min over the cone of
# psi0(eps - eta), reduced to the three eigenvalue coordinates.
# ---------------------------------------------------------------------------

def _project_cone(eta: np.ndarray, cone: str, gamma: float) -> np.ndarray:
    """Euclidean projection of eigenvalue triples onto the admissible cone."""
    if cone == "no-tension":
        return np.maximum(eta, 0.0)
    # dp-like: tr(eta) >= gamma ||dev(eta)||
    t = eta.sum(axis=-1)
    if gamma == 0.0:
        # Half-space tr >= 0: shift the trace up, keep the deviator.
        shift = np.minimum(t, 0.0) / 3.0
        return eta - shift[..., None]
    dev = eta - (t / 3.0)[..., None]
    r = np.linalg.norm(dev, axis=-1)
    beta = gamma / np.sqrt(3.0)
    s = t / np.sqrt(3.0)
    inside = s >= beta * r
    polar = s <= -r / beta
    # Boundary projection: dev shrinks by (r + beta s)/(r (1 + beta^2)),
    # the axial coordinate becomes beta times the shrunk radius.
    coef = np.maximum(r + beta * s, 0.0) / (1.0 + beta**2)
    safe_r = np.where(r > 0.0, r, 1.0)
    scale = np.where(r > 0.0, coef / safe_r, 0.0)
    proj = scale[..., None] * dev + (beta * coef / np.sqrt(3.0))[..., None]
    out = np.where(inside[..., None], eta, np.where(polar[..., None], 0.0, proj))
    return out


def _cone_minimize(eigs: np.ndarray, m: MaterialModel, cone: str) -> np.ndarray:
    """Minimize psi0(eps - eta) over the cone, in eigenvalue coordinates.

    Projected gradient with the exact Lipschitz step; the objective is
    strongly convex, so the fixed-point gap contracts linearly.
    """
    gamma = m.gamma_dp
    lam, mu = m.lam0, m.mu0
    lip = 3.0 * lam + 2.0 * mu
    scale = 1.0 + np.abs(eigs).max(axis=-1)
    eta = _project_cone(eigs.copy(), cone, gamma)
    for _ in range(CONE_MAX_ITER):
        x = eigs - eta
        grad = -(lam * x.sum(axis=-1)[..., None] + 2.0 * mu * x)
        eta_next = _project_cone(eta - grad / lip, cone, gamma)
        gap = np.abs(eta_next - eta).max(axis=-1)
        eta = eta_next
        if np.all(gap <= CONE_TOL * scale):
            return eta
    bad = int(np.argmax(gap > CONE_TOL * scale))
    raise ConeProjectionError(
        f"cone minimization did not reach stationarity in {CONE_MAX_ITER} iterations",
        strain=np.asarray(eigs).reshape(-1, 3)[bad],
    )


def _cone_sigma_r(e: np.ndarray, m: MaterialModel, cone: str):
    """Residual energy and stress of a cone split (envelope theorem)."""
    lam1, lam2, cos2t, sin2t = eig2_batch(e)
    eigs = np.stack([lam1, lam2, np.zeros_like(lam1)], axis=-1)
    eta = _cone_minimize(eigs, m, cone)
    x = eigs - eta
    tr_x = x.sum(axis=-1)
    psi_r = 0.5 * m.lam0 * tr_x**2 + m.mu0 * (x**2).sum(axis=-1)
    s_eig = m.lam0 * tr_x[..., None] + 2.0 * m.mu0 * x
    p1 = np.stack([0.5 * (1.0 + cos2t), 0.5 * (1.0 - cos2t), 0.5 * sin2t], axis=-1)
    p2 = np.stack([0.5 * (1.0 - cos2t), 0.5 * (1.0 + cos2t), -0.5 * sin2t], axis=-1)
    sig_r = s_eig[..., 0:1] * p1 + s_eig[..., 1:2] * p2
    return psi_r, sig_r


def _cone_batch(e: np.ndarray, m: MaterialModel, cone: str, order: int) -> SplitBatch:
    psi_r, sig_r = _cone_sigma_r(e, m, cone)
    out = SplitBatch(psi_d=m.psi0(e) - psi_r, psi_r=psi_r)
    if order >= 1:
        out.sig_r = sig_r
        out.sig_d = e @ m.elastic_tangent().T - sig_r
    if order >= 2:
        # Tangent of the residual stress by central differences of sigma_R;
        # second-order sensitivity of the inner minimizer is not tracked.
        norm = np.sqrt(e[..., 0] ** 2 + e[..., 1] ** 2 + 0.5 * e[..., 2] ** 2)
        h = CONE_FD_STEP * (1.0 + norm)
        cc_r = np.zeros(e.shape[:-1] + (3, 3))
        for j in range(3):
            ep = e.copy()
            em = e.copy()
            ep[..., j] += h
            em[..., j] -= h
            _, sp = _cone_sigma_r(ep, m, cone)
            _, sm = _cone_sigma_r(em, m, cone)
            cc_r[..., :, j] = (sp - sm) / (2.0 * h)[..., None]
        cc_r = 0.5 * (cc_r + np.swapaxes(cc_r, -1, -2))
        out.cc_r = cc_r
        out.cc_d = m.elastic_tangent() - cc_r
    return out


def split_arrays(e: np.ndarray, m: MaterialModel, order: int = 2) -> SplitBatch:
    """Evaluate the configured split on Voigt strains of shape (..., 3).

    ``order`` selects how much to compute: 0 energies, 1 adds stresses,
    2 adds tangents.
    """
    e = np.asarray(e, dtype=float)
    if m.split == "none":
        return _none_batch(e, m, order)
    if m.split == "voldev":
        return _voldev_batch(e, m, order)
    if m.split == "spectral":
        return _spectral_batch(e, m, order)
    if m.split == "star-convex":
        return _star_convex_batch(e, m, m.gamma_star, order)
    if m.split in CONE_SPLITS:
        return _cone_batch(e, m, m.split, order)
    raise ConfigError(f"unsupported split variant {m.split!r}")


def _as_eval(batch: SplitBatch) -> SplitEval:
    return SplitEval(
        psi_D=float(batch.psi_d[0]),
        psi_R=float(batch.psi_r[0]),
        sigma_D=batch.sig_d[0],
        sigma_R=batch.sig_r[0],
        C_D=batch.cc_d[0],
        C_R=batch.cc_r[0],
    )


def evaluate_split(eps: SymStrain, m: MaterialModel) -> SplitEval:
    """Split energy, stresses, and tangents at a single strain point."""
    e = eps.voigt()[None, :]
    if not np.all(np.isfinite(e)):
        raise ValueError(f"non-finite strain {eps}")
    return _as_eval(split_arrays(e, m, order=2))


def cone_split(eps: SymStrain, m: MaterialModel) -> SplitEval:
    """Split evaluation for the cone-constrained variants.

    Valid only for the no-tension and DP-like models; the residual part is
    the numerically minimized structured-deformation energy.
    """
    if m.split not in CONE_SPLITS:
        raise ConfigError(f"cone_split requires a cone variant, got {m.split!r}")
    e = eps.voigt()[None, :]
    return _as_eval(_cone_batch(e, m, m.split, order=2))
