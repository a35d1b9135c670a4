"""Jointly wide-sense stationary (JWSS) processes.

Generation by filtering white noise, the dense covariance and its block
structure, a statistical stationarity check, and the SIRS epidemic
simulator used as a non-stationary test bed.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .errors import ValidationError
from .graph import GraphSpectrum, GraphTopology
from .harmonic import JointFilterSpec, TimeGrid, as_filter, ijft, jft, read_signal, write_signal

DENSE_LIMIT = 4096


@dataclass(frozen=True)
class JpsdModel:
    """Non-negative joint PSD plus constant mean."""

    response: JointFilterSpec
    mean: float = 0.0

    def grid(self, spectrum: GraphSpectrum, time: TimeGrid) -> np.ndarray:
        h = as_filter(self.response).sample_spectrum(spectrum, time)
        if np.any(h < 0):
            raise ValidationError(f"JPSD {self.response} has negative values "
                                  f"(min {h.min():.3e})")
        return h


@dataclass
class ProcessEnsemble:
    """``K`` realisations stacked as a ``K x N x T`` array."""

    samples: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim == 2:
            s = s[None]
        if s.ndim != 3 or s.shape[0] < 1:
            raise ValidationError(f"ensemble must be K x N x T, got shape {s.shape}")
        self.samples = s

    @property
    def K(self) -> int:
        return self.samples.shape[0]

    @property
    def N(self) -> int:
        return self.samples.shape[1]

    @property
    def T(self) -> int:
        return self.samples.shape[2]

    def __len__(self):
        return self.K

    def __getitem__(self, idx):
        return ProcessEnsemble(self.samples[idx], dict(self.meta))


def exp_separable_jpsd(lambda_max: float, omega_rate: float = 5.0,
                       lambda_rate: float = 1.0) -> JointFilterSpec:
    """``exp(-a lambda / lambda_max) exp(-b omega^2)``, the smooth test JPSD."""
    lmax = float(lambda_max)
    return JointFilterSpec.separable(
        lambda lam: np.exp(-lambda_rate * lam / lmax),
        lambda om: np.exp(-omega_rate * om**2),
        name=f"exp_sep(lmax={lmax:.17g},a={lambda_rate:g},b={omega_rate:g})")


def _check_symmetric(h, time: TimeGrid):
    if not np.allclose(h, h[:, time.mirror_index()], rtol=1e-10, atol=1e-14 * np.abs(h).max(initial=0)):
        raise ValidationError("JPSD is not symmetric in omega; a real process needs h(l, w) = h(l, -w)")


def generate_jwss(model: JpsdModel, spectrum: GraphSpectrum, time: TimeGrid, k: int,
                  seed: int = 0, dist: str = "gaussian") -> ProcessEnsemble:
    """Draw ``k`` samples ``c 1 + h^{1/2}(L_G, L_T) eps`` with Gaussian white ``eps``."""
    if dist != "gaussian":
        raise ValidationError(f"unsupported distribution {dist!r}")
    if k < 1:
        raise ValidationError("k must be >= 1")
    if not spectrum.is_connected:
        raise ValidationError("JWSS generation requires a connected graph")
    h = model.grid(spectrum, time)
    _check_symmetric(h, time)
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal((k, spectrum.num_vertices, time.T))
    X = ijft(np.sqrt(h) * jft(eps, spectrum, time), spectrum, real=True)
    return ProcessEnsemble(X + model.mean, {"generator": "jwss", "seed": seed,
                                            "jpsd": model.response.name, "mean": model.mean})


def autocorrelation_kernels(model: JpsdModel, spectrum: GraphSpectrum, time: TimeGrid):
    """Kernels ``gamma_delta(lambda_n) = (1/T) sum_tau h(lambda_n, w_tau) e^{j w_tau delta}``.

    Returned as an ``N x T`` array indexed by lag ``delta = t1 - t2 (mod T)``.
    """
    h = model.grid(spectrum, time)
    return np.fft.ifft(h, axis=1)


def autocorrelation_blocks(model: JpsdModel, spectrum: GraphSpectrum, time: TimeGrid) -> np.ndarray:
    """Blocks ``Gamma_delta = U diag(gamma_delta) U^T`` as a ``T x N x N`` array."""
    gam = autocorrelation_kernels(model, spectrum, time)
    if np.abs(gam.imag).max(initial=0) > 1e-10 * max(np.abs(gam.real).max(initial=0), 1e-300):
        raise ValidationError("autocorrelation kernels are complex; JPSD not symmetric in omega")
    U = spectrum.eigenvectors
    return np.einsum("in,nd,jn->dij", U, gam.real, U)


def covariance_dense(model: JpsdModel, spectrum: GraphSpectrum, time: TimeGrid) -> np.ndarray:
    """Full ``NT x NT`` covariance in ``vec(X)`` (vertex-fastest) order."""
    N, T = spectrum.num_vertices, time.T
    if N * T > DENSE_LIMIT:
        raise ValidationError(f"NT = {N * T} exceeds the dense limit {DENSE_LIMIT}")
    blocks = autocorrelation_blocks(model, spectrum, time)
    lag = (np.arange(T)[:, None] - np.arange(T)[None, :]) % T
    return blocks[lag].transpose(0, 2, 1, 3).reshape(N * T, N * T)


def joint_basis(spectrum: GraphSpectrum, time: TimeGrid) -> np.ndarray:
    """Dense ``U_J = U_T kron U_G`` with ``U_T[t, tau] = e^{j w_tau t} / sqrt(T)``."""
    T = time.T
    UT = np.exp(1j * np.outer(np.arange(T), time.omegas)) / np.sqrt(T)
    return np.kron(UT, spectrum.eigenvectors)


def jpsd_from_covariance(Sigma, spectrum: GraphSpectrum, time: TimeGrid) -> np.ndarray:
    """Diagonal of ``U_J^H Sigma U_J`` reshaped to the ``N x T`` grid."""
    UJ = joint_basis(spectrum, time)
    d = np.sum(UJ.conj() * (np.asarray(Sigma) @ UJ), axis=0)
    return d.real.reshape(time.T, spectrum.num_vertices).T


def covariance_blocks(Sigma, N: int, T: int) -> np.ndarray:
    """View ``NT x NT`` as ``T x T x N x N`` blocks ``Sigma_{t1,t2}``."""
    return np.asarray(Sigma).reshape(T, N, T, N).transpose(0, 2, 1, 3)


def block_circulant_defect(Sigma, N: int, T: int) -> float:
    """Max relative deviation of ``Sigma_{t1,t2}`` from ``Sigma_{t1+1,t2+1}``."""
    B = covariance_blocks(Sigma, N, T)
    shifted = np.roll(np.roll(B, -1, axis=0), -1, axis=1)
    return float(np.linalg.norm(B - shifted) / max(np.linalg.norm(B), 1e-300))


def block_commutator_defect(Sigma, L, N: int, T: int) -> float:
    """Max over blocks of ``|[S_b, L]|_F / (|S_b|_F |L|_F)``."""
    B = covariance_blocks(Sigma, N, T)
    L = L.toarray() if hasattr(L, "toarray") else np.asarray(L)
    nl = np.linalg.norm(L)
    worst = 0.0
    for t1 in range(T):
        for t2 in range(T):
            S = B[t1, t2]
            ns = np.linalg.norm(S)
            if ns > 0:
                worst = max(worst, np.linalg.norm(S @ L - L @ S) / (ns * nl))
    return float(worst)


def extract_tpsd(model: JpsdModel, spectrum: GraphSpectrum, time: TimeGrid, tau: int) -> np.ndarray:
    """Temporal PSD block at frequency index ``tau`` (0-based): ``h(L_G, w_tau)``."""
    if not 0 <= tau < time.T:
        raise ValidationError(f"tau={tau} out of range [0, {time.T})")
    h = model.grid(spectrum, time)
    return spectrum.filter_matrix(h[:, tau])


def filtered_psd(model: JpsdModel, f) -> JpsdModel:
    """Model of ``f(L_G, L_T) X``: response ``f^2 h`` and mean ``c f(0, 0)``."""
    f = as_filter(f)
    h = as_filter(model.response)
    resp = JointFilterSpec(lambda lam, om: f.func(lam, om) ** 2 * h.func(lam, om),
                           name=f"({f.name})^2*{h.name}")
    return JpsdModel(resp, model.mean * float(f(0.0, 0.0)))


@dataclass
class JwssReport:
    mean_ok: bool
    decorrelation_ok: bool
    stats: dict
    notes: list

    @property
    def ok(self) -> bool:
        return self.mean_ok and self.decorrelation_ok


def real_joint_coefficients(ens_hat: np.ndarray) -> np.ndarray:
    """Orthonormal real re-expression of JFT coefficients of real signals.

    Frequencies ``0`` and ``T/2`` keep their real part; each conjugate pair
    ``(tau, T - tau)`` becomes ``sqrt(2) Re`` and ``sqrt(2) Im``.
    Output shape ``K x N x T``.
    """
    T = ens_hat.shape[-1]
    cols = []
    for tau in range(T // 2 + 1):
        if tau == 0 or 2 * tau == T:
            cols.append(ens_hat[..., tau].real)
        else:
            cols.append(np.sqrt(2) * ens_hat[..., tau].real)
            cols.append(np.sqrt(2) * ens_hat[..., tau].imag)
    return np.stack(cols, axis=-1)


def verify_jwss(ens: ProcessEnsemble, spectrum: GraphSpectrum, time: TimeGrid,
                alpha: float = 0.01) -> JwssReport:
    """Test the frequency characterisation of joint stationarity.

    (a) every JFT coefficient other than ``(lambda=0, omega=0)`` has zero
    mean; (b) distinct coefficients are uncorrelated. Both use a
    Bonferroni correction at family level ``alpha``.
    """
    if not spectrum.is_connected:
        raise ValidationError("verify_jwss requires a connected graph")
    K = ens.K
    notes = ["only the (lambda=0, omega=0) mode is exempt from the zero-mean test"]
    if K < 30:
        notes.append(f"K={K} < 30: statistics are unreliable")
    coeffs = real_joint_coefficients(jft(ens.samples, spectrum, time))
    Z = coeffs.reshape(K, -1)
    Z_modes = Z[:, 1:]  # column 0 is the DC mode (lambda_1 = 0, omega = 0)

    mean = Z_modes.mean(axis=0)
    sd = Z_modes.std(axis=0, ddof=1)
    scale = np.abs(Z).max(initial=0.0)
    live = sd > 1e-12 * max(scale, 1e-300)
    t_mean = np.zeros_like(mean)
    t_mean[live] = mean[live] / (sd[live] / np.sqrt(K))
    dead_nonzero = (~live) & (np.abs(mean) > 1e-9 * max(scale, 1e-300))
    m_tests = max(int(live.sum()), 1)
    p_mean = 2 * stats.t.sf(np.abs(t_mean), df=K - 1)
    min_p_mean = float(p_mean[live].min()) if live.any() else 1.0
    mean_ok = bool(min_p_mean >= alpha / m_tests and not dead_nonzero.any())

    Zl = Z[:, np.concatenate([[True], live])] if Z.shape[1] else Z
    Zc = Zl - Zl.mean(axis=0)
    nrm = np.linalg.norm(Zc, axis=0)
    ok_cols = nrm > 1e-12 * max(scale, 1e-300)
    Zc = Zc[:, ok_cols] / nrm[ok_cols]
    R = Zc.T @ Zc
    iu = np.triu_indices(R.shape[0], k=1)
    r = np.clip(R[iu], -1 + 1e-15, 1 - 1e-15)
    df = K - 2
    if r.size and df > 0:
        t_corr = r * np.sqrt(df / (1 - r**2))
        p_corr = 2 * stats.t.sf(np.abs(t_corr), df=df)
        min_p_corr = float(p_corr.min())
        max_r = float(np.abs(r).max())
    else:
        min_p_corr, max_r = 1.0, 0.0
    n_pairs = max(int(r.size), 1)
    decor_ok = bool(min_p_corr >= alpha / n_pairs)
    return JwssReport(mean_ok, decor_ok, {
        "max_mean_statistic": float(np.abs(t_mean).max(initial=0.0)),
        "min_mean_pvalue": min_p_mean,
        "mean_tests": m_tests,
        "max_abs_correlation": max_r,
        "min_correlation_pvalue": min_p_corr,
        "correlation_tests": n_pairs,
        "alpha": alpha,
    }, notes)


SUSCEPTIBLE, INFECTED, RECOVERED = 0, 1, 2


def sirs_simulate(g: GraphTopology, t: int = 180, infection_days: int = 2,
                  immunity_days: int = 10, contagion_prob: float = 0.005, k: int = 10,
                  seed: int = 0, start_vertex: int = 0, return_states: bool = False):
    """Discrete-time SIRS epidemic on the vertices of ``g``.

    Each day every infected vertex infects each susceptible neighbour with
    probability ``contagion_prob``. Infection lasts ``infection_days``,
    immunity ``immunity_days``. ``start_vertex`` is a persistent source:
    it is reinfected whenever it becomes susceptible. The returned signal is
    the 0/1 infection indicator.
    """
    n = g.num_vertices
    if not 0 <= start_vertex < n:
        raise ValidationError(f"start_vertex {start_vertex} out of range [0, {n})")
    if not 0.0 <= contagion_prob <= 1.0:
        raise ValidationError("contagion_prob must lie in [0, 1]")
    if infection_days < 1 or immunity_days < 0 or t < 1 or k < 1:
        raise ValidationError("invalid SIRS durations or sizes")
    A = g.adjacency()
    A.data[:] = 1.0
    rng = np.random.default_rng(seed)
    out = np.zeros((k, n, t))
    all_states = np.zeros((k, n, t), dtype=np.int8)
    for rep in range(k):
        state = np.full(n, SUSCEPTIBLE, dtype=np.int8)
        clock = np.zeros(n, dtype=np.int64)
        state[start_vertex] = INFECTED
        for day in range(t):
            out[rep, :, day] = state == INFECTED
            all_states[rep, :, day] = state
            infected = (state == INFECTED).astype(float)
            pressure = A @ infected
            p_inf = 1.0 - (1.0 - contagion_prob) ** pressure
            new_inf = (state == SUSCEPTIBLE) & (rng.random(n) < p_inf)
            clock += 1
            recover = (state == INFECTED) & (clock >= infection_days)
            wane = (state == RECOVERED) & (clock >= immunity_days)
            state[recover] = RECOVERED if immunity_days > 0 else SUSCEPTIBLE
            clock[recover] = 0
            state[wane] = SUSCEPTIBLE
            state[new_inf] = INFECTED
            clock[new_inf] = 0
            if state[start_vertex] == SUSCEPTIBLE:
                state[start_vertex] = INFECTED
                clock[start_vertex] = 0
    ens = ProcessEnsemble(out, {"generator": "sirs", "seed": seed, "T": t,
                                "infection_days": infection_days, "immunity_days": immunity_days,
                                "contagion_prob": contagion_prob, "start_vertex": start_vertex})
    return (ens, all_states) if return_states else ens


def save_ensemble(ens: ProcessEnsemble, directory, extra: dict | None = None) -> Path:
    """Write ``sample_XXXX.bin`` files plus ``manifest.json``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    files = []
    for i, X in enumerate(ens.samples):
        name = f"sample_{i:04d}.bin"
        write_signal(d / name, X)
        files.append(name)
    manifest = {"N": ens.N, "T": ens.T, "K": ens.K, "files": files}
    manifest.update(ens.meta)
    if extra:
        manifest.update(extra)
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return d / "manifest.json"


def load_ensemble(directory: str | os.PathLike) -> ProcessEnsemble:
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    samples = np.stack([read_signal(d / f) for f in manifest["files"]])
    if samples.shape != (manifest["K"], manifest["N"], manifest["T"]):
        raise ValidationError(f"{d}: sample files do not match manifest dimensions")
    meta = {key: v for key, v in manifest.items() if key not in ("files",)}
    return ProcessEnsemble(samples, meta)
