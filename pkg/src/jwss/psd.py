"""Joint power spectral density (JPSD) estimation.

Three estimators share one result type, :class:`PsdEstimate`:

* ``sample_jpsd`` averages squared JFT magnitudes over realisations;
* ``convolutional_jpsd`` smooths that estimate with a 2-D spectral window
  (exact, needs the eigendecomposition);
* ``fast_jpsd`` approximates the convolutional estimator with a Welch
  STFT in time and Chebyshev graph filters in the vertex domain, so no
  eigendecomposition is ever formed.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import CubicSpline

from .errors import ValidationError
from .graph import (LAMBDA_MAX_INFLATION, GraphSpectrum, _group_indices, chebyshev_coefficients,
                    chebyshev_nodes, chebyshev_recurrence, estimate_lambda_max)
from .harmonic import JointFilterSpec, TimeGrid, jft, read_signal, wrap_omega, write_signal
from .process import ProcessEnsemble

FLOOR_RATIO = 1e-12
CENTER_TOL = 1e-6


class ResolutionWarning(UserWarning):
    """Window narrower than what the Chebyshev order can resolve."""


@dataclass(frozen=True)
class WindowSpec:
    """Separable joint window, or a joint disc window for analysis.

    ``time_kind`` is ``"iterated_sine"`` (support ``L``) or ``"dirac"``;
    ``graph_kind`` is ``"gaussian"`` (``F`` centres) or ``"dirac"``.
    Setting ``disc_bandwidth`` overrides both with the indicator of
    ``|theta| <= B / 2``.
    """

    L: int | None = None
    F: int | None = None
    time_kind: str = "iterated_sine"
    graph_kind: str = "gaussian"
    disc_bandwidth: float | None = None

    def __post_init__(self):
        if self.disc_bandwidth is not None:
            if not self.disc_bandwidth > 0:
                raise ValidationError("disc bandwidth must be positive")
            return
        if self.time_kind not in ("iterated_sine", "dirac"):
            raise ValidationError(f"unknown time window {self.time_kind!r}")
        if self.graph_kind not in ("gaussian", "dirac"):
            raise ValidationError(f"unknown graph window {self.graph_kind!r}")
        if self.time_kind == "iterated_sine":
            if self.L is None or self.L < 2 or self.L % 2:
                raise ValidationError(f"time window support L must be even and >= 2, got {self.L}")
        if self.graph_kind == "gaussian" and (self.F is None or self.F < 1):
            raise ValidationError(f"number of graph centres F must be >= 1, got {self.F}")

    @classmethod
    def dirac(cls) -> "WindowSpec":
        return cls(time_kind="dirac", graph_kind="dirac")

    @classmethod
    def disc(cls, bandwidth: float) -> "WindowSpec":
        return cls(disc_bandwidth=bandwidth)

    @property
    def is_disc(self) -> bool:
        return self.disc_bandwidth is not None

    def validate_for(self, N: int, T: int) -> None:
        if self.is_disc:
            return
        if self.time_kind == "iterated_sine" and self.L > T:
            raise ValidationError(f"window support L={self.L} exceeds T={T}")
        if self.graph_kind == "gaussian" and self.F > N:
            raise ValidationError(f"F={self.F} exceeds N={N}")

    def time_window(self) -> np.ndarray:
        """Iterated sine ``sin(pi/2 cos(pi t / L)^2)`` on ``t = -L/2 .. L/2 - 1``."""
        t = np.arange(self.L) - self.L // 2
        return np.sin(0.5 * np.pi * np.cos(np.pi * t / self.L) ** 2)

    def sigma2(self, lambda_max: float) -> float:
        F = self.F
        return 2.0 * (F + 1) * lambda_max / F**2

    def centers(self, lambda_max: float) -> np.ndarray:
        return np.linspace(0.0, lambda_max, self.F)

    def graph_g2(self, dlam, lambda_max: float):
        dlam = np.asarray(dlam, dtype=float)
        if self.graph_kind == "dirac":
            return (np.abs(dlam) <= 1e-9).astype(float)
        return np.exp(-2.0 * dlam**2 / self.sigma2(lambda_max))

    def time_g2(self, domega):
        domega = wrap_omega(domega)
        if self.time_kind == "dirac":
            return (np.abs(domega) <= 1e-12).astype(float)
        w = self.time_window()
        t = np.arange(self.L)
        W = np.exp(-1j * np.multiply.outer(domega, t)) @ w
        return np.abs(W) ** 2

    def g2(self, dlam, domega, lambda_max: float):
        """Squared window ``g(theta - theta')^2`` for frequency offsets."""
        if self.is_disc:
            dist = np.hypot(dlam, wrap_omega(domega))
            return (dist <= self.disc_bandwidth / 2 + 1e-12).astype(float)
        return self.graph_g2(dlam, lambda_max) * self.time_g2(domega)


@dataclass(frozen=True)
class EstimatorConfig:
    window: WindowSpec
    num_probes: int = 100
    cheb_order: int = 50

    def __post_init__(self):
        if self.num_probes < 1:
            raise ValidationError("num_probes must be >= 1")
        if self.cheb_order < 1:
            raise ValidationError("cheb_order must be >= 1")

    @classmethod
    def default(cls, N: int, L: int, **kw) -> "EstimatorConfig":
        return cls(WindowSpec(L=L, F=min(N, 50)), **kw)


@dataclass
class PsdEstimate:
    """JPSD values on a ``lambdas x omegas`` grid plus an interpolant."""

    values: np.ndarray
    lambdas: np.ndarray
    omegas: np.ndarray
    kind: str
    num_samples: int
    cg: np.ndarray | None = None
    params: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    gamma_fourth_moment: float = 3.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.lambdas = np.asarray(self.lambdas, dtype=float)
        self.omegas = np.asarray(self.omegas, dtype=float)
        if self.values.shape != (self.lambdas.size, self.omegas.size):
            raise ValidationError("estimate values do not match its frequency axes")

    @property
    def lambda_range(self):
        return float(self.lambdas.min()), float(self.lambdas.max())

    def floored(self) -> np.ndarray:
        """Values clamped at ``1e-12 max`` so they can serve as variances."""
        top = self.values.max(initial=0.0)
        if top <= 0:
            raise ValidationError("estimate is identically non-positive")
        return np.maximum(self.values, FLOOR_RATIO * top)

    def _axes(self, floor: bool):
        vals = self.floored() if floor else self.values
        order = np.argsort(self.lambdas, kind="stable")
        lam, vals = self.lambdas[order], vals[order]
        groups = _group_indices(lam)
        lam_u = np.array([lam[g].mean() for g in groups])
        vals_u = np.array([vals[g].mean(axis=0) for g in groups])
        om = np.mod(self.omegas, 2 * np.pi)
        o = np.argsort(om)
        return lam_u, vals_u[:, o], om[o]

    def evaluate(self, lam, omega, floor: bool = False) -> np.ndarray:
        """Interpolated estimate at arbitrary ``(lambda, omega)``.

        Cubic spline in lambda (natural; linear for exact grids) and
        periodic cubic spline in omega. Lambdas outside the grid are
        clamped and a warning is recorded.
        """
        lam_u, vals, om_u = self._axes(floor)
        lam, omega = np.broadcast_arrays(np.asarray(lam, float), np.asarray(omega, float))
        lo, hi = lam_u[0], lam_u[-1]
        if np.any(lam < lo - 1e-12) or np.any(lam > hi + 1e-12):
            msg = f"lambda queries outside [{lo:.4g}, {hi:.4g}] were clamped"
            if msg not in self.warnings:
                self.warnings.append(msg)
        lam_c = np.clip(lam, lo, hi)
        omw = np.mod(omega, 2 * np.pi)
        out = np.empty(lam.shape)
        if om_u.size > 1:
            ext_om = np.concatenate([om_u, [om_u[0] + 2 * np.pi]])
            ext_vals = np.concatenate([vals, vals[:, :1]], axis=1)
            om_spline = CubicSpline(ext_om, ext_vals, axis=1, bc_type="periodic")
        for w in np.unique(omw):
            sel = omw == w
            if om_u.size > 1:
                w_eval = w if w >= om_u[0] else w + 2 * np.pi
                col = om_spline(w_eval)
            else:
                col = vals[:, 0]
            if lam_u.size == 1:
                out[sel] = col[0]
            elif self.kind == "fast" and lam_u.size > 2:
                out[sel] = CubicSpline(lam_u, col, bc_type="natural")(lam_c[sel])
            else:
                out[sel] = np.interp(lam_c[sel], lam_u, col)
        if floor:
            out = np.maximum(out, FLOOR_RATIO * vals.max())
        return out

    def on_grid(self, lambdas, time: TimeGrid, floor: bool = False) -> np.ndarray:
        lambdas = np.asarray(lambdas, dtype=float)
        if (lambdas.size == self.lambdas.size and np.array_equal(lambdas, self.lambdas)
                and self.omegas.size == time.T and np.allclose(self.omegas, time.omegas)):
            return self.floored() if floor else self.values.copy()
        return self.evaluate(lambdas[:, None], time.omegas[None, :], floor=floor)

    def as_filter(self, floor: bool = True) -> JointFilterSpec:
        spec = JointFilterSpec(lambda lam, om: self.evaluate(lam, om, floor=floor),
                               name=f"psd_estimate({self.kind})")
        return spec


def center(ens: ProcessEnsemble):
    """Subtract the grand mean over samples, vertices and time."""
    c = float(ens.samples.mean())
    return ProcessEnsemble(ens.samples - c, dict(ens.meta, centered_by=c)), c


def _check_centered(ens: ProcessEnsemble):
    mean = abs(float(ens.samples.mean()))
    rms = float(np.sqrt(np.mean(ens.samples**2)))
    if mean > CENTER_TOL * max(rms, 1e-300) and mean > 1e-300:
        raise ValidationError(f"ensemble has grand mean {mean:.3e}; call psd.center() first")


def gaussian_fourth_moments(T: int) -> np.ndarray:
    """``E|eps_hat|^4`` per temporal frequency for a real Gaussian process.

    3 for the real modes ``omega = 0, pi``; 2 for the complex ones.
    """
    g = np.full(T, 2.0)
    g[0] = 3.0
    if T % 2 == 0:
        g[T // 2] = 3.0
    return g


def sample_variance_gaussian(h_grid, K: int, time: TimeGrid) -> np.ndarray:
    """Variance of the sample estimator, ``h^2 (gamma - 1) / K`` per mode."""
    return np.asarray(h_grid) ** 2 * (gaussian_fourth_moments(time.T) - 1.0)[None, :] / K


def sample_jpsd(ens: ProcessEnsemble, spectrum: GraphSpectrum, time: TimeGrid,
                check_centered: bool = True) -> PsdEstimate:
    """Average of ``|JFT{X_k}|^2`` over the ``K`` realisations."""
    if check_centered:
        _check_centered(ens)
    Xh = jft(ens.samples, spectrum, time)
    h = np.mean(np.abs(Xh) ** 2, axis=0)
    h = spectrum.group_average(h)
    return PsdEstimate(h, spectrum.eigenvalues, time.omegas, "sample", ens.K,
                       params={"F": spectrum.num_vertices, "L": time.T})


def _window_lambda_max(spectrum: GraphSpectrum, lambda_max):
    return spectrum.lambda_max * LAMBDA_MAX_INFLATION if lambda_max is None else float(lambda_max)


def convolution_weights(window: WindowSpec, spectrum: GraphSpectrum, time: TimeGrid,
                        lambda_max: float | None = None):
    """Row-normalised graph and time smoothing matrices of a separable window.

    Returns ``(Wg, Wt, cg, ct)`` so that the estimate is ``Wg @ h @ Wt.T``.
    """
    lmax = _window_lambda_max(spectrum, lambda_max)
    lam = spectrum.eigenvalues
    G = window.graph_g2(lam[:, None] - lam[None, :], lmax)
    if window.time_kind == "dirac":
        Tm = np.eye(time.T)
    else:
        P = np.abs(np.fft.fft(window.time_window(), n=time.T)) ** 2
        Tm = P[(np.arange(time.T)[:, None] - np.arange(time.T)[None, :]) % time.T]
    cg, ct = G.sum(axis=1), Tm.sum(axis=1)
    return G / cg[:, None], Tm / ct[:, None], cg, ct


def convolve_at(h_grid, window: WindowSpec, spectrum: GraphSpectrum, time: TimeGrid, theta,
                lambda_max: float | None = None, power: int = 1):
    """``sum g(theta - theta_nt)^(2 power) h_nt / c_g(theta)^power`` at one ``theta``."""
    lmax = _window_lambda_max(spectrum, lambda_max)
    lam0, om0 = theta
    g2 = window.g2(lam0 - spectrum.eigenvalues[:, None], om0 - time.omegas[None, :], lmax)
    c = g2.sum()
    if c <= 0:
        raise ValidationError(f"window is empty at theta=({lam0:.6g}, {om0:.6g})")
    return float(np.sum(g2**power * np.asarray(h_grid)) / c**power), g2, c


def convolutional_jpsd(ens: ProcessEnsemble, spectrum: GraphSpectrum, time: TimeGrid,
                       window: WindowSpec, lambda_max: float | None = None,
                       sample: PsdEstimate | None = None) -> PsdEstimate:
    """Sample estimate smoothed by ``g^2`` and normalised by ``c_g``, on the full grid."""
    window.validate_for(spectrum.num_vertices, time.T)
    s = sample if sample is not None else sample_jpsd(ens, spectrum, time)
    hs = s.values
    lmax = _window_lambda_max(spectrum, lambda_max)
    if window.is_disc:
        lam = spectrum.eigenvalues
        out = np.empty_like(hs)
        cg = np.empty_like(hs)
        for n in range(lam.size):
            for t in range(time.T):
                out[n, t], _, cg[n, t] = convolve_at(hs, window, spectrum, time,
                                                     (lam[n], time.omegas[t]), lmax)
    else:
        Wg, Wt, cgg, ct = convolution_weights(window, spectrum, time, lmax)
        if np.any(cgg <= 0) or np.any(ct <= 0):
            raise ValidationError("window normalisation vanished on the grid")
        out = Wg @ hs @ Wt.T
        cg = np.outer(cgg, ct)
    out = spectrum.group_average(out)
    return PsdEstimate(out, spectrum.eigenvalues, time.omegas, "convolutional", ens.K, cg=cg,
                       params={"F": _effective_f(window, spectrum.num_vertices),
                               "L": _effective_l(window, time.T), "lambda_max": lmax,
                               "window": asdict(window)})


def _effective_f(window: WindowSpec, N: int) -> int:
    return N if window.is_disc or window.graph_kind == "dirac" else window.F


def _effective_l(window: WindowSpec, T: int) -> int:
    return T if window.is_disc or window.time_kind == "dirac" else window.L


def welch_stft(samples: np.ndarray, window: np.ndarray) -> np.ndarray:
    """Half-overlapping windowed segments with a unitary length-``L`` DFT.

    Frames start every ``L/2`` steps and stop before running past the
    signal end. Returns ``K x N x frames x L``.
    """
    L = window.size
    T = samples.shape[-1]
    hop = L // 2
    starts = np.arange(0, T - L + 1, hop)
    idx = starts[:, None] + np.arange(L)[None, :]
    segs = samples[..., idx] * window
    return np.fft.fft(segs, axis=-1, norm="ortho")


def chebyshev_moments(L, Y, lambda_max: float, order: int, column_groups: np.ndarray,
                      n_groups: int) -> np.ndarray:
    """Summed moments ``mu_m = sum_cols Re <y, T_m(L~) y>`` for ``m <= 2 order``.

    Columns of ``Y`` are pooled by ``column_groups``; the doubling
    identities ``T_{2i} = 2 T_i^2 - 1`` and ``T_{2i+1} = 2 T_{i+1} T_i - T_1``
    give ``2 order + 1`` moments from ``order`` sparse products.
    """
    mu = np.zeros((2 * order + 1, n_groups))

    def pooled(a, b):
        return np.bincount(column_groups, weights=np.real(np.sum(np.conj(a) * b, axis=0)),
                           minlength=n_groups)

    prev = None
    for i, ti in enumerate(chebyshev_recurrence(L, Y, lambda_max, order + 1)):
        if i == 0:
            mu[0] = pooled(Y, Y)
        elif i == 1:
            mu[1] = pooled(Y, ti)
        if 2 * i <= 2 * order:
            mu[2 * i] = 2 * pooled(ti, ti) - mu[0] if i > 0 else mu[0]
        if prev is not None:
            mu[2 * i - 1] = 2 * pooled(ti, prev) - mu[1] if i > 1 else mu[1]
        prev = ti
    return mu


def filtered_energy(coeffs: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """``|sum_i c_i T_i y|^2`` from moments: ``sum_ij c_i c_j (mu_{i+j} + mu_|i-j|) / 2``."""
    m = coeffs.shape[0]
    i = np.arange(m)
    S = i[:, None] + i[None, :]
    D = np.abs(i[:, None] - i[None, :])
    out = np.empty((coeffs.shape[1], mu.shape[1]))
    for g in range(mu.shape[1]):
        M = 0.5 * (mu[S, g] + mu[D, g])
        out[:, g] = np.einsum("if,ij,jf->f", coeffs, M, coeffs)
    return out


def fast_jpsd(ens: ProcessEnsemble, L, time: TimeGrid, cfg: EstimatorConfig,
              seed: int = 0, lambda_max: float | None = None) -> PsdEstimate:
    """Convolutional JPSD estimate in time linear in edges x timesteps.

    Time: Welch averaging of squared STFT magnitudes (iterated-sine
    window, hop ``L/2``). Graph: for each of ``F`` centres the energy
    ``|g(L_G - lambda I) x|^2`` via Chebyshev filters, normalised by
    ``c_g(lambda)`` estimated from ``Q`` Gaussian probe signals. Values
    live on an ``F x L`` grid and are interpolated by cubic splines.
    """
    _check_centered(ens)
    window = cfg.window
    if window.is_disc or window.time_kind != "iterated_sine" or window.graph_kind != "gaussian":
        raise ValidationError("fast_jpsd needs an iterated-sine time window and a Gaussian graph window")
    L = sp.csr_matrix(L, dtype=float)
    N = L.shape[0]
    window.validate_for(N, time.T)
    if ens.N != N or ens.T != time.T:
        raise ValidationError("ensemble does not match graph/time dimensions")
    notes = []
    lmax = estimate_lambda_max(L, seed=seed) if lambda_max is None else float(lambda_max)
    if lmax <= 0:
        raise ValidationError("graph has no edges; use the sample estimator")
    order = cfg.cheb_order
    sigma = np.sqrt(window.sigma2(lmax))
    if sigma < 2.0 * lmax / order:
        msg = (f"graph window width {sigma:.3g} is below the Chebyshev resolution "
               f"{2.0 * lmax / order:.3g} (order {order}); estimates are smeared")
        notes.append(msg)
        warnings.warn(msg, ResolutionWarning, stacklevel=2)

    w = window.time_window()
    Lw = window.L
    stft = welch_stft(ens.samples, w)
    n_frames = stft.shape[2]
    n_bands = Lw // 2 + 1
    # K x N x frames x bands -> N x (K frames bands)
    Y = np.moveaxis(stft[..., :n_bands], 1, 0).reshape(N, -1)
    band_of_col = np.tile(np.arange(n_bands), ens.K * n_frames)
    mu = chebyshev_moments(L, Y, lmax, order, band_of_col, n_bands)

    centers = window.centers(lmax)
    nodes = chebyshev_nodes(order, lmax)
    gvals = np.exp(-(nodes[:, None] - centers[None, :]) ** 2 / sigma**2)
    coeffs = chebyshev_coefficients(gvals)
    energy = filtered_energy(coeffs, mu)

    rng = np.random.default_rng(seed)
    probes = rng.standard_normal((N, cfg.num_probes))
    mu_p = chebyshev_moments(L, probes, lmax, order, np.zeros(cfg.num_probes, dtype=int), 1)
    cg = filtered_energy(coeffs, mu_p)[:, 0] / cfg.num_probes
    if np.any(cg <= 0):
        raise ValidationError("graph window normalisation estimate is non-positive")
    ct = np.sum(w**2) / Lw

    half = energy / (ens.K * n_frames * ct * cg[:, None])
    vals = np.empty((window.F, Lw))
    vals[:, :n_bands] = half
    mirror = (-np.arange(n_bands, Lw)) % Lw
    vals[:, n_bands:] = half[:, mirror]
    omegas = 2 * np.pi * np.arange(Lw) / Lw
    return PsdEstimate(vals, centers, omegas, "fast", ens.K, cg=cg,
                       params={"F": window.F, "L": Lw, "Q": cfg.num_probes, "seed": seed,
                               "cheb_order": order, "lambda_max": lmax, "frames": n_frames},
                       warnings=notes)


def bias_bound(window: WindowSpec, spectrum: GraphSpectrum, time: TimeGrid,
               lipschitz_eps: float, theta, lambda_max: float | None = None) -> float:
    """``eps / c_g(theta) sum g(theta - theta_nt)^2 |theta - theta_nt|``."""
    if lipschitz_eps < 0:
        raise ValidationError("Lipschitz constant must be non-negative")
    lam0, om0 = theta
    dlam = lam0 - spectrum.eigenvalues[:, None]
    dom = wrap_omega(om0 - time.omegas[None, :])
    _, g2, c = convolve_at(np.zeros((spectrum.num_vertices, time.T)), window, spectrum, time,
                           theta, lambda_max)
    return float(lipschitz_eps * np.sum(g2 * np.hypot(dlam, dom)) / c)


def variance_formula(window: WindowSpec, spectrum: GraphSpectrum, time: TimeGrid,
                     sample_variances, theta, lambda_max: float | None = None) -> float:
    """``sum g^4 / c_g^2 var(sample estimate)``, assuming independent JFT entries."""
    return convolve_at(sample_variances, window, spectrum, time, theta, lambda_max, power=2)[0]


def gaussian_convolutional_variance(window: WindowSpec, spectrum: GraphSpectrum,
                                    time: TimeGrid, h_grid, K: int, theta,
                                    lambda_max: float | None = None) -> float:
    """Exact variance of the convolutional estimate for a real Gaussian process.

    Unlike :func:`variance_formula` this accounts for the sample estimates
    at ``omega`` and ``-omega`` being identical.
    """
    _, g2, c = convolve_at(h_grid, window, spectrum, time, theta, lambda_max)
    a = g2 / c
    h = np.asarray(h_grid)
    T = time.T
    total = 0.0
    for tau in range(T // 2 + 1):
        mirror = (-tau) % T
        if mirror == tau:
            total += np.sum(a[:, tau] ** 2 * 2 * h[:, tau] ** 2 / K)
        else:
            total += np.sum((a[:, tau] + a[:, mirror]) ** 2 * h[:, tau] ** 2 / K)
    return float(total)


def aic_score(ens: ProcessEnsemble, estimate: PsdEstimate, spectrum: GraphSpectrum,
              time: TimeGrid, num_params: int | None = None) -> float:
    """``2 F L - 2 ln l`` with the Gaussian likelihood evaluated spectrally."""
    h = estimate.on_grid(spectrum.eigenvalues, time, floor=True)
    if np.any(h <= 0):
        raise ValidationError("estimate is not strictly positive after flooring")
    if num_params is None:
        num_params = int(estimate.params["F"]) * int(estimate.params["L"])
    Xh = jft(ens.samples, spectrum, time)
    loglik = -0.5 * np.sum(np.log(2 * np.pi * h)[None] + np.abs(Xh) ** 2 / h[None])
    return float(2 * num_params - 2 * loglik)


def candidate_windows(N: int, T: int, F_values=None, L_values=None) -> list[WindowSpec]:
    """Grid of separable windows, dirac limits included, for AIC selection."""
    if F_values is None:
        F_values = sorted({min(N, 10), min(N, 50)})
    if L_values is None:
        L_values = sorted({2**j for j in range(1, T.bit_length()) if 2**j <= T} | {T - T % 2} - {0})
    out = []
    for F in list(F_values) + [None]:
        for L in list(L_values) + [None]:
            out.append(WindowSpec(L=L, F=F, time_kind="dirac" if L is None else "iterated_sine",
                                  graph_kind="dirac" if F is None else "gaussian"))
    return out


def select_window_aic(ens: ProcessEnsemble, spectrum: GraphSpectrum, time: TimeGrid,
                      candidates=None):
    """Convolutional estimate with the lowest AIC; returns ``(estimate, scores)``."""
    candidates = candidates or candidate_windows(spectrum.num_vertices, time.T)
    sample = sample_jpsd(ens, spectrum, time)
    best, scores = None, []
    for win in candidates:
        est = convolutional_jpsd(ens, spectrum, time, win, sample=sample)
        score = aic_score(ens, est, spectrum, time)
        scores.append((win, score))
        if best is None or score < best[1]:
            best = (est, score)
    return best[0], scores


def save_estimate(est: PsdEstimate, path) -> Path:
    """JSON manifest at ``path`` plus ``<stem>.bin`` with the value grid."""
    path = Path(path)
    grid_file = path.with_suffix(".bin")
    write_signal(grid_file, est.values)
    manifest = {
        "kind": est.kind,
        "num_samples": est.num_samples,
        "lambdas": [float(v).hex() for v in est.lambdas],
        "omegas": [float(v).hex() for v in est.omegas],
        "cg": None if est.cg is None else [float(v).hex() for v in np.ravel(est.cg)],
        "cg_shape": None if est.cg is None else list(np.shape(est.cg)),
        "params": _jsonable(est.params),
        "warnings": est.warnings,
        "gamma_fourth_moment": est.gamma_fourth_moment,
        "values_file": grid_file.name,
    }
    path.write_text(json.dumps(manifest, indent=2))
    return path


def load_estimate(path) -> PsdEstimate:
    path = Path(path)
    m = json.loads(path.read_text())
    values = read_signal(path.parent / m["values_file"])
    cg = None
    if m["cg"] is not None:
        cg = np.array([float.fromhex(v) for v in m["cg"]]).reshape(m["cg_shape"])
    return PsdEstimate(values, [float.fromhex(v) for v in m["lambdas"]],
                       [float.fromhex(v) for v in m["omegas"]], m["kind"], m["num_samples"],
                       cg=cg, params=m["params"], warnings=m["warnings"],
                       gamma_fourth_moment=m["gamma_fourth_moment"])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj
