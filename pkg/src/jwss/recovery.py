"""Linear MMSE recovery of JWSS processes from linear measurements.

The measurement model is ``y = A x + w`` with ``A`` either a 0/1 mask over
the ``N x T`` grid or a joint filter. Covariances are never formed; every
operator application is a joint filter plus a mask.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse.linalg import LinearOperator, minres

from .errors import ConvergenceWarning, ValidationError
from .harmonic import JointDomain, JointFilterSpec, as_filter

METHODS = ("minres_cg", "fista", "douglas_rachford", "wiener_closed_form")


def make_mask(kind: str, n: int, t: int, p_d: float = 0.0, t_split: int | None = None,
              seed: int = 0) -> np.ndarray:
    """0/1 measurement mask of shape ``n x t``.

    ``interpolation`` zeroes ``round(p_d n t)`` uniformly chosen entries,
    ``forecasting`` keeps the first ``t_split`` timesteps and ``denoising``
    keeps everything.
    """
    if kind == "denoising":
        return np.ones((n, t))
    if kind == "forecasting":
        if t_split is None or not 1 <= t_split <= t:
            raise ValidationError(f"t_split must lie in [1, {t}]")
        mask = np.zeros((n, t))
        mask[:, :t_split] = 1.0
        return mask
    if kind == "interpolation":
        if not 0.0 <= p_d <= 1.0:
            raise ValidationError("p_d must lie in [0, 1]")
        mask = np.ones(n * t)
        drop = np.random.default_rng(seed).choice(n * t, size=int(round(p_d * n * t)), replace=False)
        mask[drop] = 0.0
        return mask.reshape(n, t)
    raise ValidationError(f"unknown mask kind {kind!r}")


@dataclass(frozen=True)
class SolverConfig:
    method: str = "minres_cg"
    tolerance: float = 1e-8
    max_iters: int | None = None
    cheb_order: int = 50
    rho: float = 1.0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValidationError(f"unknown method {self.method!r}; choose from {METHODS}")
        if not self.tolerance > 0:
            raise ValidationError("tolerance must be positive")
        if self.max_iters is not None and self.max_iters < 1:
            raise ValidationError("max_iters must be >= 1")
        if not self.rho > 0:
            raise ValidationError("rho must be positive")


@dataclass
class RecoveryProblem:
    """``y = A x + w`` on a joint domain.

    ``measurement`` is an ``N x T`` 0/1 mask or a :class:`JointFilterSpec`.
    ``signal_psd`` is the JPSD of ``x`` and ``noise_psd`` that of ``w``
    (``None`` means noiseless). Masked entries of ``y`` are ignored.
    """

    domain: JointDomain
    measurement: object
    signal_psd: JointFilterSpec
    y: np.ndarray
    noise_psd: JointFilterSpec | None = None
    signal_mean: float = 0.0

    def __post_init__(self):
        shape = (self.domain.N, self.domain.T)
        self.y = np.asarray(self.y, dtype=float)
        if self.y.shape != shape:
            raise ValidationError(f"observations have shape {self.y.shape}, expected {shape}")
        self.signal_psd = as_filter(self.signal_psd)
        if self.noise_psd is not None:
            self.noise_psd = as_filter(self.noise_psd)
        if self.is_mask:
            m = np.asarray(self.measurement, dtype=float)
            if m.shape != shape:
                raise ValidationError(f"mask has shape {m.shape}, expected {shape}")
            if not np.all((m == 0) | (m == 1)):
                raise ValidationError("mask entries must be 0 or 1")
            self.measurement = m
            self.y = np.where(m > 0, self.y, 0.0)
        else:
            self.measurement = as_filter(self.measurement)
        if not np.all(np.isfinite(self.y)):
            raise ValidationError("observations must be finite")

    @property
    def is_mask(self) -> bool:
        return not isinstance(self.measurement, JointFilterSpec) and not callable(self.measurement)

    @property
    def x_mean(self) -> np.ndarray:
        return np.full((self.domain.N, self.domain.T), float(self.signal_mean))

    @property
    def y_mean(self) -> np.ndarray:
        return self.apply_A(self.x_mean)

    def apply_A(self, v):
        if self.is_mask:
            return self.measurement * v
        return self.domain.filter(self.measurement, v)

    apply_AT = apply_A  # masks and real symmetric joint filters are self-adjoint

    def apply_sigma_x(self, v):
        return self.domain.filter(self.signal_psd, v)

    def apply_sigma_w(self, v):
        if self.noise_psd is None:
            return np.zeros_like(v)
        return self.domain.filter(self.noise_psd, v)

    def operator_norm_A(self) -> float:
        if self.is_mask:
            return float(self.measurement.max(initial=0.0))
        a = self.measurement
        grid = a.sample(np.linspace(0, self.domain.lambda_max, 257), self.domain.time)
        return float(np.abs(grid).max())


def apply_sigma_y(p: RecoveryProblem, v) -> np.ndarray:
    """``A h_x A^T v + h_w v`` via joint filtering."""
    v = np.asarray(v, dtype=float).reshape(p.domain.N, p.domain.T)
    return p.apply_A(p.apply_sigma_x(p.apply_AT(v))) + p.apply_sigma_w(v)


@dataclass
class RecoveryReport:
    method: str
    iterations: int
    relative_residual: float
    converged: bool
    history: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"method": self.method, "iterations": self.iterations,
                "relative_residual": self.relative_residual, "converged": self.converged}


def mmse_recover(p: RecoveryProblem, cfg: SolverConfig | None = None):
    """``x = Sigma_x A^T Sigma_y^+ (y - y_mean) + x_mean`` with MINRES.

    ``Sigma_y`` is only applied, never formed. For a singular
    ``Sigma_y`` the Krylov iterate started at zero is the minimum-norm
    least-squares solution.
    """
    cfg = cfg or SolverConfig()
    N, T = p.domain.N, p.domain.T
    n = N * T
    r = (p.y - p.y_mean).ravel()
    rnorm = np.linalg.norm(r)
    if rnorm == 0:
        return p.x_mean, RecoveryReport("minres_cg", 0, 0.0, True)
    if p.is_mask and p.noise_psd is None:
        # noiseless masking: Sigma_y vanishes off the observed entries, so the
        # minimum-norm solution solves the (non-singular) observed block only
        keep = p.measurement.ravel() > 0
    else:
        keep = np.ones(n, dtype=bool)

    def embed(v):
        full = np.zeros(n)
        full[keep] = v
        return full

    m = int(keep.sum())
    op = LinearOperator((m, m), matvec=lambda v: apply_sigma_y(p, embed(v)).ravel()[keep],
                        dtype=float)
    r = r[keep]
    max_iters = cfg.max_iters or n
    counter = [0]

    def cb(_):
        counter[0] += 1

    # scipy's MINRES stops once |r| <= rtol (|Sigma_y| |z| + |b|), which is much
    # looser than |r| <= tol |b| when |z| is large. Rerun from scratch with rtol
    # scaled by the observed shortfall until the true residual meets the tolerance.
    rtol = cfg.tolerance
    best, rel = np.zeros(m), 1.0
    while counter[0] < max_iters:
        z, _ = minres(op, r, rtol=rtol, maxiter=max_iters - counter[0], callback=cb)
        res = float(np.linalg.norm(op.matvec(z) - r) / rnorm)
        if res < rel:
            best, rel = z, res
        if rel < cfg.tolerance:
            break
        rtol *= 0.5 * cfg.tolerance / max(res, cfg.tolerance)
        if rtol < np.finfo(float).eps:
            break
    z = best
    converged = rel < cfg.tolerance
    if not converged:
        warnings.warn(f"MINRES stopped with relative residual {rel:.3e}", ConvergenceWarning,
                      stacklevel=2)
    x = p.apply_sigma_x(p.apply_AT(embed(z).reshape(N, T))) + p.x_mean
    return x, RecoveryReport("minres_cg", counter[0], rel, converged)


def wiener_filter(h_x, h_w, a=1.0) -> JointFilterSpec:
    """``f = h_x a / (a^2 h_x + h_w)``, defined as 0 where the denominator is 0."""
    h_x, h_w, a = as_filter(h_x), as_filter(0.0 if h_w is None else h_w), as_filter(a)

    def f(lam, om):
        hx, hw, av = h_x.func(lam, om), h_w.func(lam, om), a.func(lam, om)
        num = np.asarray(hx * av, dtype=float)
        den = np.asarray(av**2 * hx + hw, dtype=float)
        num, den = np.broadcast_arrays(num, den)
        out = np.zeros(den.shape)
        nz = den != 0
        out[nz] = num[nz] / den[nz]
        return out

    return JointFilterSpec(f, name=f"wiener({h_x.name},{h_w.name},{a.name})")


def wiener_recover(p: RecoveryProblem):
    """Closed-form recovery when ``A`` is a joint filter."""
    if p.is_mask:
        if not np.all(p.measurement == 1):
            raise ValidationError("closed-form Wiener recovery needs A to be a joint filter")
        a = JointFilterSpec.constant(1.0)
    else:
        a = p.measurement
    f = wiener_filter(p.signal_psd, p.noise_psd, a)
    x = p.domain.filter(f, p.y - p.y_mean) + p.x_mean
    return x, RecoveryReport("wiener_closed_form", 1, 0.0, True)


def _ratio_filter(p: RecoveryProblem, floor: float):
    h_x, h_w = p.signal_psd, p.noise_psd
    probe = h_x.sample(np.linspace(0, p.domain.lambda_max, 129), p.domain.time)
    if p.domain.spectrum is not None:
        probe = np.concatenate([probe.ravel(),
                                h_x.sample_spectrum(p.domain.spectrum, p.domain.time).ravel()])
    if np.min(probe) <= floor:
        raise ValidationError(f"signal JPSD drops to {np.min(probe):.3e} <= floor {floor:.3e}; "
                              "floor the estimate (PsdEstimate.as_filter(floor=True))")
    return JointFilterSpec(lambda lam, om: h_w.func(lam, om) / h_x.func(lam, om),
                           name=f"{h_w.name}/{h_x.name}")


def fista_recover(p: RecoveryProblem, cfg: SolverConfig | None = None, floor: float = 0.0):
    """FISTA on ``|A z - y|^2 + |h_w^{1/2} h_x^{-1/2} (z - x_mean)|^2``.

    Gradient steps on the data term with step ``1 / (2 |A|^2)`` and the
    prior handled by its proximal operator, the joint filter
    ``1 / (1 + 2 gamma h_w / h_x)``. Momentum restarts when the objective
    increases.
    """
    cfg = cfg or SolverConfig(method="fista")
    xbar = p.x_mean
    if p.noise_psd is None:
        ratio = None
    else:
        ratio = _ratio_filter(p, floor)
    step = 1.0 / (2.0 * max(p.operator_norm_A() ** 2, 1e-300))
    prox = None if ratio is None else JointFilterSpec(
        lambda lam, om: 1.0 / (1.0 + 2.0 * step * ratio.func(lam, om)), name="fista_prox")

    def objective(z):
        data = np.sum((p.apply_A(z) - p.y) ** 2)
        if ratio is None:
            return float(data)
        d = z - xbar
        return float(data + np.sum(d * p.domain.filter(ratio, d)))

    max_iters = cfg.max_iters or 10_000
    x = xbar.copy()
    v = x.copy()
    t = 1.0
    f_prev = objective(x)
    history = [f_prev]
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        grad = 2.0 * p.apply_AT(p.apply_A(v) - p.y)
        u = v - step * grad
        x_new = u if prox is None else xbar + p.domain.filter(prox, u - xbar)
        f_new = objective(x_new)
        if f_new > f_prev:
            t = 1.0
            v = x.copy()
            history.append(f_prev)
            continue
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        v = x_new + ((t - 1.0) / t_new) * (x_new - x)
        change = abs(f_prev - f_new) / max(abs(f_prev), 1e-300)
        step_change = np.linalg.norm(x_new - x) / max(np.linalg.norm(x_new), 1e-300)
        x, t, f_prev = x_new, t_new, f_new
        history.append(f_new)
        if change < cfg.tolerance and step_change < np.sqrt(cfg.tolerance):
            converged = True
            break
    if not converged:
        warnings.warn("FISTA reached max_iters before the objective settled", ConvergenceWarning,
                      stacklevel=2)
    return x, RecoveryReport("fista", it, float(change if it else 0.0), converged, history)


def douglas_rachford_recover(p: RecoveryProblem, cfg: SolverConfig | None = None):
    """Noiseless recovery ``min |h_x^{-1/2}(z - x_mean)|^2`` subject to ``A z = y``.

    Alternates the prior's proximal operator, the joint filter
    ``rho h_x / (rho h_x + 1)`` around ``x_mean``, with projection onto
    the observed entries. The returned iterate is a projection, so the
    constraint holds exactly.
    """
    cfg = cfg or SolverConfig(method="douglas_rachford")
    if not p.is_mask:
        raise ValidationError("Douglas-Rachford recovery needs a mask measurement")
    if p.noise_psd is not None:
        raise ValidationError("Douglas-Rachford recovery is for noiseless problems")
    mask = p.measurement
    xbar = p.x_mean
    rho = cfg.rho
    h = p.signal_psd
    prox = JointFilterSpec(lambda lam, om: rho * h.func(lam, om) / (rho * h.func(lam, om) + 1.0),
                           name="dr_prox")

    def project(v):
        return np.where(mask > 0, p.y, v)

    u = project(xbar)
    z = u
    max_iters = cfg.max_iters or 100_000
    converged = False
    rel = 0.0
    it = 0
    for it in range(1, max_iters + 1):
        xk = xbar + p.domain.filter(prox, u - xbar)
        z_new = project(2.0 * xk - u)
        u = u + z_new - xk
        rel = float(np.linalg.norm(z_new - z) / max(np.linalg.norm(z_new), 1e-300))
        z = z_new
        if rel < cfg.tolerance:
            converged = True
            break
    if not converged:
        warnings.warn(f"Douglas-Rachford stopped with relative change {rel:.3e}",
                      ConvergenceWarning, stacklevel=2)
    return z, RecoveryReport("douglas_rachford", it, rel, converged)


def recover(p: RecoveryProblem, cfg: SolverConfig | None = None):
    cfg = cfg or SolverConfig()
    if cfg.method == "minres_cg":
        return mmse_recover(p, cfg)
    if cfg.method == "fista":
        return fista_recover(p, cfg)
    if cfg.method == "douglas_rachford":
        return douglas_rachford_recover(p, cfg)
    return wiener_recover(p)


def normalized_rmse(x_hat, x) -> float:
    """``|x_hat - x|_2 / |x|_2``."""
    return float(np.linalg.norm(np.asarray(x_hat) - x) / max(np.linalg.norm(x), 1e-300))


def read_mask(path, n: int, t: int) -> np.ndarray:
    """Mask file: JSON ``{"observed": [flat indices]}`` or a 0/1 bitset line."""
    text = Path(path).read_text().strip()
    if text.startswith("{"):
        idx = np.asarray(json.loads(text)["observed"], dtype=int)
        mask = np.zeros(n * t)
        mask[idx] = 1.0
        return mask.reshape(n, t)
    bits = np.array([int(ch) for ch in text if ch in "01"], dtype=float)
    if bits.size != n * t:
        raise ValidationError(f"{path}: bitset has {bits.size} entries, expected {n * t}")
    return bits.reshape(n, t)


def write_mask(path, mask) -> None:
    """Write the observed flat indices (row-major over ``N x T``) as JSON."""
    observed = np.flatnonzero(np.asarray(mask).ravel() > 0).tolist()
    Path(path).write_text(json.dumps({"shape": list(np.shape(mask)), "observed": observed}))
