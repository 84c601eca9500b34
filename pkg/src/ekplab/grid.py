"""Uniform periodic grids on the unit torus with Fourier-spectral operators.

Fields are plain numpy arrays.  A scalar field has shape ``grid.shape``;
a vector field has shape ``(grid.dim, *grid.shape)``.  The torus is
``[0, 1)^d`` so the volume is one and ``integrate(f) == f.mean()``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class Grid:
    """Uniform ``n^dim`` grid on the unit torus.

    Parameters
    ----------
    dim : int
        Spatial dimension, 1 or 2.
    n : int
        Points per axis, a power of two and at least 8.
    """

    dim: int
    n: int
    wavenumbers: tuple = field(init=False, repr=False, compare=False)
    _ik: tuple = field(init=False, repr=False, compare=False)
    _k2: np.ndarray = field(init=False, repr=False, compare=False)
    _mask: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if self.n < 8 or self.n & (self.n - 1):
            raise ValueError(f"n must be a power of two >= 8, got {self.n}")
        n = self.n
        # rfftn layout: full frequencies on leading axes, half on the last
        freqs = [np.fft.fftfreq(n, d=1.0 / n) for _ in range(self.dim - 1)]
        freqs.append(np.fft.rfftfreq(n, d=1.0 / n))
        ks = []
        for axis, f in enumerate(freqs):
            shape = [1] * self.dim
            shape[axis] = f.size
            ks.append(f.reshape(shape))
        ks = tuple(np.rint(k).astype(int) for k in ks)
        # first-derivative symbols drop the Nyquist mode so real fields stay real
        ik = tuple(np.where(np.abs(k) == n // 2, 0.0, TWO_PI * k) * 1j for k in ks)
        k2 = sum(np.abs(s) ** 2 for s in ik)
        mask = np.ones(np.broadcast_shapes(*(k.shape for k in ks)), dtype=bool)
        for k in ks:
            mask &= np.abs(k) <= n / 3.0
        object.__setattr__(self, "wavenumbers", ks)
        object.__setattr__(self, "_ik", ik)
        object.__setattr__(self, "_k2", np.broadcast_to(k2, mask.shape).copy())
        object.__setattr__(self, "_mask", mask)

    # -- geometry -----------------------------------------------------------
    @property
    def shape(self) -> tuple:
        return (self.n,) * self.dim

    @property
    def spacing(self) -> float:
        return 1.0 / self.n

    @property
    def spectral_shape(self) -> tuple:
        return self._mask.shape

    def coords(self) -> tuple:
        """Meshgrid of node coordinates, one array per axis."""
        x = np.arange(self.n) / self.n
        return tuple(np.meshgrid(*([x] * self.dim), indexing="ij"))

    @property
    def k_squared(self) -> np.ndarray:
        """Symbol ``|2 pi k|^2`` of ``-laplacian`` (Nyquist removed)."""
        return self._k2

    @property
    def dealias_mask(self) -> np.ndarray:
        return self._mask

    @property
    def derivative_symbols(self) -> tuple:
        """Per-axis ``i 2 pi k`` in the rfftn layout (Nyquist set to zero)."""
        return self._ik

    # -- validation ---------------------------------------------------------
    def check_scalar(self, f) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        if f.shape != self.shape:
            raise ValueError(f"scalar field shape {f.shape} does not match grid {self.shape}")
        return f

    def check_vector(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.dim, *self.shape):
            raise ValueError(
                f"vector field shape {v.shape} does not match grid {(self.dim, *self.shape)}"
            )
        return v

    # -- transforms ---------------------------------------------------------
    def fft(self, f: np.ndarray) -> np.ndarray:
        return np.fft.rfftn(f)

    def ifft(self, fh: np.ndarray) -> np.ndarray:
        return np.fft.irfftn(fh, s=self.shape, axes=tuple(range(self.dim)))

    # -- operators ----------------------------------------------------------
    def gradient(self, f) -> np.ndarray:
        return self.gradient_hat(self.fft(self.check_scalar(f)))

    def gradient_hat(self, fh: np.ndarray) -> np.ndarray:
        """Gradient of a field given by its rfftn coefficients."""
        return np.stack([self.ifft(ik * fh) for ik in self._ik])

    def divergence(self, v) -> np.ndarray:
        v = self.check_vector(v)
        return self.ifft(sum(ik * self.fft(vj) for ik, vj in zip(self._ik, v)))

    def laplacian(self, f) -> np.ndarray:
        return self.ifft(-self._k2 * self.fft(self.check_scalar(f)))

    def integrate(self, f) -> float:
        return float(np.mean(f))

    def dealias(self, f) -> np.ndarray:
        """Zero every mode with some ``|k_j| > n/3`` (two-thirds rule)."""
        return self.ifft(self._mask * self.fft(self.check_scalar(f)))

    def ddx(self, f, axis: int, dealias: bool = False) -> np.ndarray:
        """Partial derivative along one axis, optionally dealiasing the input first."""
        fh = self.fft(f)
        if dealias:
            fh = fh * self._mask
        return self.ifft(self._ik[axis] * fh)

    def div_dealiased(self, v) -> np.ndarray:
        """Divergence of a vector of nonlinear products, each dealiased."""
        return self.ifft(sum(ik * self._mask * self.fft(vj) for ik, vj in zip(self._ik, v)))

    def grad_dealiased(self, f) -> np.ndarray:
        fh = self._mask * self.fft(f)
        return np.stack([self.ifft(ik * fh) for ik in self._ik])

    def dot(self, u, v) -> np.ndarray:
        return np.sum(np.asarray(u) * np.asarray(v), axis=0)

    # -- resampling ---------------------------------------------------------
    def resample(self, f, target: "Grid") -> np.ndarray:
        """Spectral prolongation/restriction of a scalar field to another grid."""
        f = self.check_scalar(f)
        if target.dim != self.dim:
            raise ValueError("resample needs grids of equal dimension")
        if target.n == self.n:
            return f.copy()
        full = np.fft.fftn(f) / f.size
        m = min(self.n, target.n)
        keep = np.fft.fftfreq(m, d=1.0 / m).astype(int)
        # drop the shared Nyquist line to keep the result real and unambiguous
        keep = keep[np.abs(keep) < m // 2]
        out = np.zeros(target.shape, dtype=complex)
        idx_src = np.ix_(*([keep % self.n] * self.dim))
        idx_dst = np.ix_(*([keep % target.n] * self.dim))
        out[idx_dst] = full[idx_src]
        return np.real(np.fft.ifftn(out * target.n**self.dim))

    def interpolate(self, f, points) -> np.ndarray:
        """Evaluate the trigonometric interpolant of ``f`` at arbitrary points.

        ``points`` has shape ``(dim, P)``; coordinates may lie outside ``[0, 1)``.
        """
        f = self.check_scalar(f)
        points = np.atleast_2d(np.asarray(points, dtype=float))
        n = self.n
        coef = np.fft.fftn(f) / f.size
        k = np.fft.fftfreq(n, d=1.0 / n)
        # the real part of the one-sided sum equals the symmetric interpolant
        ex = np.exp(1j * TWO_PI * np.outer(points[0], k))
        if self.dim == 1:
            return np.real(ex @ coef)
        ey = np.exp(1j * TWO_PI * np.outer(points[1], k))
        return np.real(np.sum((ex @ coef) * ey, axis=1))
