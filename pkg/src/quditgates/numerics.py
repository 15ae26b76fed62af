"""Dense complex matrix kernel for small Hermitian problems.

Everything in this package runs on matrices no larger than ~25x25, so all
matrix exponentials go through one Hermitian eigendecomposition routine
rather than a scaling-and-squaring path.  Eigenvector phases follow a fixed
convention (first nonzero component real positive) so that downstream
dressed-state labeling is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

HERMITICITY_ATOL = 1e-12


class NonHermitianError(ValueError):
    """Raised when an operation requires a Hermitian matrix and gets none."""


def _check_hermitian(H: np.ndarray, atol: float = HERMITICITY_ATOL) -> np.ndarray:
    H = np.asarray(H)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {H.shape}")
    dev = np.max(np.abs(H - H.conj().T))
    if dev > atol:
        raise NonHermitianError(
            f"matrix is not Hermitian: max|H - H^dag| = {dev:.3e} > {atol:.1e}"
        )
    return H


def _fix_phases(vecs: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Rotate each column so its first nonzero component is real positive."""
    vecs = vecs.copy()
    for k in range(vecs.shape[1]):
        col = vecs[:, k]
        nz = np.flatnonzero(np.abs(col) > tol)
        idx = nz[0] if nz.size else 0
        ph = col[idx]
        if np.abs(ph) > tol:
            vecs[:, k] = col * (np.conj(ph) / np.abs(ph))
    return vecs


def herm_eigendecompose(H: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecompose a Hermitian matrix.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvalues ascending and
    eigenvectors as columns satisfying ``H = V diag(w) V^dag``.  Column
    phases are fixed so the first nonzero component of each is real
    positive.

    Raises
    ------
    NonHermitianError
        If ``max|H - H^dag|`` exceeds 1e-12.
    """
    H = _check_hermitian(H)
    w, V = np.linalg.eigh(H)
    return w, _fix_phases(V)


def propagator_exp(H: np.ndarray, dt: float) -> np.ndarray:
    """exp(-i*dt*H) for Hermitian H, via eigendecomposition.

    ``dt`` must be non-negative; the result is unitary to ~1e-10.
    """
    if dt < 0:
        raise ValueError(f"dt must be >= 0, got {dt}")
    H = _check_hermitian(H)
    w, V = np.linalg.eigh(H)
    return (V * np.exp(-1j * dt * w)) @ V.conj().T


def batch_propagators(H: np.ndarray, dt: float) -> np.ndarray:
    """exp(-i*dt*H[j]) for a stack of real-symmetric matrices ``(N, d, d)``.

    Fast path for piecewise-constant evolution: the static and control
    Hamiltonians in this package are all real symmetric, so the
    eigendecomposition stays in real arithmetic and the complex exponential
    is assembled from two real matrix products.
    """
    w, V = np.linalg.eigh(H)
    Vt = V.transpose(0, 2, 1)
    C = np.matmul(V * np.cos(dt * w)[:, None, :], Vt)
    S = np.matmul(V * np.sin(dt * w)[:, None, :], Vt)
    return C - 1j * S


@dataclass
class Spectrum:
    """Discrete Fourier data of a real time series.

    ``frequencies`` are angular frequencies in units of the reference
    Larmor frequency; ``coefficients`` use the 1/N-forward normalization,
    so a unit-amplitude tone cos(w0*t) carries coefficients of magnitude
    ~1/2 at +-w0.
    """

    frequencies: np.ndarray
    coefficients: np.ndarray

    def __post_init__(self):
        if len(self.frequencies) != len(self.coefficients):
            raise ValueError("frequencies and coefficients must have equal length")

    @property
    def magnitudes(self) -> np.ndarray:
        return np.abs(self.coefficients)


def dft(signal: np.ndarray, dt: float) -> Spectrum:
    """Discrete Fourier transform of a uniformly sampled signal.

    The frequency axis is angular (2*pi*k/(N*dt)), centered with
    ``fftshift`` so negative frequencies come first.  For real input the
    coefficient magnitudes are symmetric under w -> -w.
    """
    signal = np.asarray(signal)
    if signal.size < 2:
        raise ValueError("signal must have at least 2 samples")
    n = signal.size
    coeff = np.fft.fftshift(np.fft.fft(signal)) / n
    freqs = np.fft.fftshift(np.fft.fftfreq(n, d=dt)) * 2.0 * np.pi
    return Spectrum(frequencies=freqs, coefficients=coeff)


def idft(spec: Spectrum) -> np.ndarray:
    """Invert :func:`dft`.  Returns the (complex) time series."""
    n = len(spec.coefficients)
    return np.fft.ifft(np.fft.ifftshift(spec.coefficients)) * n
