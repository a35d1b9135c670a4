"""Graph, time and joint Fourier transforms, and joint time-vertex filtering.

Conventions: a time-vertex signal is an ``N x T`` array (vertices on rows),
the DFT is unitary (``norm="ortho"``) and frequency ``tau`` sits at
``omega = 2 pi tau / T``. Responses are evaluated at the wrapped frequency
in ``(-pi, pi]`` so that even functions of omega give real filters.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .errors import ValidationError
from .graph import (GraphSpectrum, _group_indices, chebyshev_coefficients, chebyshev_nodes,
                    chebyshev_recurrence, estimate_lambda_max)

REAL_RESIDUE_TOL = 1e-8


@dataclass(frozen=True)
class TimeGrid:
    T: int

    def __post_init__(self):
        if int(self.T) < 1:
            raise ValidationError("T must be a positive integer")

    @property
    def omegas(self) -> np.ndarray:
        """Angular frequencies ``2 pi tau / T`` in ``[0, 2 pi)``."""
        return 2.0 * np.pi * np.arange(self.T) / self.T

    @property
    def wrapped_omegas(self) -> np.ndarray:
        """The same frequencies mapped into ``(-pi, pi]``."""
        return wrap_omega(self.omegas)

    def mirror_index(self) -> np.ndarray:
        """Index of ``-omega`` for each frequency."""
        return (-np.arange(self.T)) % self.T


def wrap_omega(omega):
    w = np.mod(np.asarray(omega, dtype=float), 2.0 * np.pi)
    return np.where(w > np.pi, w - 2.0 * np.pi, w)


class JointFilterSpec:
    """A joint frequency response ``h(lambda, omega)``.

    ``func`` must broadcast over numpy arrays. ``omega`` is passed wrapped
    into ``(-pi, pi]``.
    """

    def __init__(self, func: Callable, name: str = "custom", factors=None):
        self.func = func
        self.name = name
        self.factors = factors

    def __call__(self, lam, omega):
        lam = np.asarray(lam, dtype=float)
        omega = wrap_omega(omega)
        out = np.asarray(self.func(lam, omega), dtype=float)
        return np.broadcast_to(out, np.broadcast(lam, omega).shape)

    def __repr__(self):
        return f"JointFilterSpec({self.name})"

    @property
    def is_separable(self) -> bool:
        return self.factors is not None

    @classmethod
    def constant(cls, value: float) -> "JointFilterSpec":
        value = float(value)
        return cls(lambda lam, om: np.full(np.broadcast(lam, om).shape, value),
                   name=f"const({value:g})",
                   factors=(lambda lam: np.full(np.shape(lam), value),
                            lambda om: np.ones(np.shape(om))))

    @classmethod
    def separable(cls, graph_response: Callable, time_response: Callable,
                  name: str = "separable") -> "JointFilterSpec":
        return cls(lambda lam, om: graph_response(lam) * time_response(om), name=name,
                   factors=(graph_response, time_response))

    @classmethod
    def from_grid(cls, values, lambdas, name: str = "grid") -> "JointFilterSpec":
        """Response sampled on ``(lambdas, omega_tau)``.

        Exact at the sampled pairs; linearly interpolated in lambda
        elsewhere. Values at repeated eigenvalues are averaged.
        """
        values = np.asarray(values, dtype=float)
        lambdas = np.asarray(lambdas, dtype=float)
        if values.ndim != 2 or values.shape[0] != lambdas.size:
            raise ValidationError("grid values must be (len(lambdas), T)")
        order = np.argsort(lambdas, kind="stable")
        lam_sorted, vals_sorted = lambdas[order], values[order]
        groups = _group_indices(lam_sorted)
        lam_u = np.array([lam_sorted[g].mean() for g in groups])
        vals_u = np.array([vals_sorted[g].mean(axis=0) for g in groups])
        T = values.shape[1]

        def func(lam, om):
            lam, om = np.broadcast_arrays(np.asarray(lam, float), np.asarray(om, float))
            tau = np.rint(np.mod(om, 2 * np.pi) * T / (2 * np.pi)).astype(int) % T
            out = np.empty(lam.shape)
            for t in np.unique(tau):
                sel = tau == t
                out[sel] = np.interp(lam[sel], lam_u, vals_u[:, t])
            return out

        spec = cls(func, name=name)
        spec.grid_values = values
        spec.grid_lambdas = lambdas
        return spec

    def sample(self, lambdas, time: TimeGrid) -> np.ndarray:
        """Response on the ``len(lambdas) x T`` joint frequency grid."""
        lambdas = np.asarray(lambdas, dtype=float)
        return np.array(self(lambdas[:, None], time.omegas[None, :]), dtype=float)

    def sample_spectrum(self, spectrum: GraphSpectrum, time: TimeGrid) -> np.ndarray:
        """Grid at the graph eigenvalues, constant within repeated groups."""
        grid = self.sample(spectrum.eigenvalues, time)
        if not np.all(np.isfinite(grid)):
            raise ValidationError(f"{self}: response has non-finite values on the grid")
        return spectrum.group_average(grid)

    def __mul__(self, other):
        if isinstance(other, JointFilterSpec):
            return JointFilterSpec(lambda lam, om: self.func(lam, om) * other.func(lam, om),
                                   name=f"{self.name}*{other.name}")
        other = float(other)
        return JointFilterSpec(lambda lam, om: other * self.func(lam, om),
                               name=f"{other:g}*{self.name}")

    __rmul__ = __mul__


def as_filter(h) -> JointFilterSpec:
    """Coerce scalars and callables to :class:`JointFilterSpec`."""
    if isinstance(h, JointFilterSpec):
        return h
    if np.isscalar(h):
        return JointFilterSpec.constant(h)
    if callable(h):
        return JointFilterSpec(h)
    raise ValidationError(f"cannot interpret {type(h).__name__} as a joint filter")


def _check_signal(X, N, T):
    X = np.asarray(X)
    if X.shape[-2:] != (N, T):
        raise ValidationError(f"signal shape {X.shape[-2:]} does not match (N, T) = ({N}, {T})")
    if not np.all(np.isfinite(X)):
        raise ValidationError("signal has non-finite entries")
    return X


def gft(X, spectrum: GraphSpectrum):
    return np.matmul(spectrum.eigenvectors.T, X)


def igft(Xh, spectrum: GraphSpectrum):
    return np.matmul(spectrum.eigenvectors, Xh)


def dft(X):
    return np.fft.fft(X, axis=-1, norm="ortho")


def idft(Xh):
    return np.fft.ifft(Xh, axis=-1, norm="ortho")


def jft(X, spectrum: GraphSpectrum, time: TimeGrid | None = None) -> np.ndarray:
    """Joint Fourier transform of an ``N x T`` signal (or a stack of them)."""
    X = np.asarray(X)
    T = X.shape[-1] if time is None else time.T
    X = _check_signal(X, spectrum.num_vertices, T)
    return dft(gft(X, spectrum))


def ijft(Xh, spectrum: GraphSpectrum, real: bool | None = None) -> np.ndarray:
    """Inverse JFT; returns a real array when the imaginary part is round-off."""
    out = igft(idft(Xh), spectrum)
    if real is None or real:
        return _drop_imag(out, strict=bool(real))
    return out


def _drop_imag(Z, strict: bool):
    re_norm = np.linalg.norm(Z.real)
    im_norm = np.linalg.norm(Z.imag)
    if im_norm <= REAL_RESIDUE_TOL * re_norm or im_norm < 1e-300:
        return Z.real.copy()
    if strict:
        raise ValidationError(
            f"filtered real signal has imaginary part {im_norm:.3e} "
            f"(real part {re_norm:.3e}); the response is not symmetric in omega")
    return Z


def apply_joint_filter_exact(h, X, spectrum: GraphSpectrum, time: TimeGrid | None = None):
    """Filter by multiplying the JFT coefficients with ``h(lambda_n, omega_tau)``."""
    X = np.asarray(X)
    time = time or TimeGrid(X.shape[-1])
    if isinstance(h, np.ndarray):
        grid = h
    else:
        grid = as_filter(h).sample_spectrum(spectrum, time)
    if not np.all(np.isfinite(grid)):
        raise ValidationError("response grid has non-finite values")
    if np.isrealobj(X) and np.allclose(grid, grid[:, time.mirror_index()], rtol=1e-12, atol=0):
        # real signal, real output: half-spectrum transforms give the same result
        _check_signal(X, spectrum.num_vertices, time.T)
        U = spectrum.eigenvectors
        Yh = np.fft.rfft(U.T @ X, axis=-1)
        Yh *= grid[:, : time.T // 2 + 1]
        return U @ np.fft.irfft(Yh, n=time.T, axis=-1)
    Xh = jft(X, spectrum, time)
    return ijft(grid * Xh, spectrum, real=True if np.isrealobj(X) else False)


def joint_cheb_coefficients(h, time: TimeGrid, lambda_max: float, order: int) -> np.ndarray:
    """``(order + 1) x T`` Chebyshev coefficients of ``h(., omega_tau)``."""
    nodes = chebyshev_nodes(order, lambda_max)
    vals = as_filter(h).sample(nodes, time)
    if not np.all(np.isfinite(vals)):
        raise ValidationError("response is not finite on the Chebyshev grid")
    return chebyshev_coefficients(vals)


def apply_joint_filter_fast(h, X, L, time: TimeGrid | None = None, cheb_order: int = 50,
                            lambda_max: float | None = None, coefficients=None):
    """Joint filtering without eigendecomposition.

    FFT along time, then for every temporal frequency a Chebyshev
    approximation of the graph filter ``h(., omega_tau)``, then inverse FFT.
    ``coefficients`` may carry precomputed :func:`joint_cheb_coefficients`.
    """
    if cheb_order < 1:
        raise ValidationError("cheb_order must be >= 1")
    X = np.asarray(X)
    N = L.shape[0]
    time = time or TimeGrid(X.shape[-1])
    X = _check_signal(X, N, time.T)
    if lambda_max is None:
        lambda_max = estimate_lambda_max(L)
    is_real = np.isrealobj(X)
    Xf = dft(X)
    batch_shape = Xf.shape[:-2]
    Y = np.moveaxis(Xf, -2, 0).reshape(N, -1)
    if lambda_max <= 0:
        grid = as_filter(h).sample(np.zeros(1), time)[0]
        out = Y * np.tile(grid, Y.shape[1] // time.T)
    else:
        C = coefficients if coefficients is not None else \
            joint_cheb_coefficients(h, time, lambda_max, cheb_order)
        reps = Y.shape[1] // time.T
        out = np.zeros_like(Y)
        for ck, tk in zip(C, chebyshev_recurrence(L, Y, lambda_max, C.shape[0])):
            if np.any(ck):
                out += tk * np.tile(ck, reps)
    out = np.moveaxis(out.reshape((N,) + batch_shape + (time.T,)), 0, -2)
    out = idft(out)
    return _drop_imag(out, strict=True) if is_real else out


class JointDomain:
    """A graph plus time grid able to apply joint filters.

    Uses the exact spectral path when a spectrum is available and
    ``mode != "fast"``; otherwise the Chebyshev path.
    """

    def __init__(self, L, time: TimeGrid, spectrum: GraphSpectrum | None = None,
                 lambda_max: float | None = None, cheb_order: int = 50, mode: str = "auto"):
        if mode not in ("auto", "exact", "fast"):
            raise ValidationError(f"unknown filtering mode {mode!r}")
        if mode == "exact" and spectrum is None:
            raise ValidationError("exact filtering needs a graph spectrum")
        self.L = sp.csr_matrix(L)
        self.time = time
        self.spectrum = spectrum
        self.cheb_order = cheb_order
        self.mode = "exact" if (mode == "auto" and spectrum is not None) else \
            ("fast" if mode == "auto" else mode)
        if lambda_max is None:
            lambda_max = (spectrum.lambda_max * 1.01 if spectrum is not None
                          else estimate_lambda_max(self.L))
        self.lambda_max = float(lambda_max)
        self._cache: dict[int, np.ndarray] = {}

    @property
    def N(self) -> int:
        return self.L.shape[0]

    @property
    def T(self) -> int:
        return self.time.T

    def _prepared(self, h):
        key = id(h)
        if key not in self._cache:
            if self.mode == "exact":
                self._cache[key] = (h, as_filter(h).sample_spectrum(self.spectrum, self.time))
            else:
                self._cache[key] = (h, joint_cheb_coefficients(h, self.time, self.lambda_max,
                                                               self.cheb_order))
        return self._cache[key][1]

    def response_grid(self, h) -> np.ndarray:
        """Sampled response; only available on the exact path."""
        if self.spectrum is None:
            raise ValidationError("response grid needs a graph spectrum")
        return as_filter(h).sample_spectrum(self.spectrum, self.time)

    def filter(self, h, X):
        X = np.asarray(X)
        if self.mode == "exact":
            return apply_joint_filter_exact(self._prepared(h), X, self.spectrum, self.time)
        return apply_joint_filter_fast(h, X, self.L, self.time, self.cheb_order,
                                       self.lambda_max, coefficients=self._prepared(h))


_SIGNAL_HEADER = struct.Struct("<qq")


def write_signal(path, X) -> None:
    """Binary signal: ``N, T`` as little-endian int64 then row-major float64."""
    X = np.ascontiguousarray(np.asarray(X, dtype="<f8"))
    if X.ndim != 2:
        raise ValidationError("signal must be 2-D")
    with open(path, "wb") as fh:
        fh.write(_SIGNAL_HEADER.pack(*X.shape))
        fh.write(X.tobytes(order="C"))


def read_signal(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _SIGNAL_HEADER.size:
        raise ValidationError(f"{path}: truncated header")
    N, T = _SIGNAL_HEADER.unpack_from(raw)
    body = raw[_SIGNAL_HEADER.size:]
    if len(body) != 8 * N * T:
        raise ValidationError(f"{path}: expected {N}x{T} doubles, got {len(body)} bytes")
    return np.frombuffer(body, dtype="<f8").reshape(N, T).astype(float)


def write_signal_csv(path, X) -> None:
    np.savetxt(path, np.asarray(X, dtype=float), delimiter=",", fmt="%.17g")


def read_signal_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)
