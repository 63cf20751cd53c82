"""Weighted prediction error (WPE) dereverberation.

All routines work on complex arrays shaped (T, F, D) and also accept a
:class:`~vacewpe.stft.Spectrogram`, in which case the dereverberated output
is wrapped back into one. The delayed stack is ordered tap-major,
channel-minor::

    stack[t, f, (tau - delay) * D + d] = X[t - tau, f, d],  tau = delay .. delay+K-1

with zeros wherever ``t - tau < 0``.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .stft import Spectrogram

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class WpeConfig:
    taps: int = 10
    delay: int = 3
    context: int = 1
    iterations: int = 3
    diag_load: float = 1e-6
    psd_floor: float = 1e-10

    def __post_init__(self):
        if int(self.taps) < 1:
            raise ValueError(f"taps (K) must be >= 1, got {self.taps}")
        if int(self.delay) < 1:
            raise ValueError(f"delay must be >= 1, got {self.delay}")
        if int(self.context) < 0:
            raise ValueError(f"context must be >= 0, got {self.context}")
        if int(self.iterations) < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if not self.diag_load >= 0:
            raise ValueError(f"diag_load must be >= 0, got {self.diag_load}")
        if not self.psd_floor >= 0:
            raise ValueError(f"psd_floor must be >= 0, got {self.psd_floor}")


@dataclass(frozen=True)
class LpFilterBank:
    """Prediction filters, ``coeffs`` shaped (F, D*K, D); column d predicts channel d."""

    coeffs: np.ndarray
    taps: int
    channels: int
    failed: Optional[np.ndarray] = None

    def __post_init__(self):
        F, n, D = self.coeffs.shape
        if n != self.taps * self.channels or D != self.channels:
            raise ValueError(f"filter shape {self.coeffs.shape} inconsistent with "
                             f"K={self.taps}, D={self.channels}")
        if self.failed is None:
            object.__setattr__(self, "failed", np.zeros(F, dtype=bool))


def _unwrap(X):
    if isinstance(X, Spectrogram):
        return X.data, X
    arr = np.asarray(X)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValueError(f"expected a (T, F, D) array, got shape {arr.shape}")
    return arr.astype(np.complex128, copy=False), None


def _wrap(data, like):
    return like.with_data(data) if like is not None else data


def build_delayed_stack(X, delay: int, taps: int) -> np.ndarray:
    X, _ = _unwrap(X)
    T, F, D = X.shape
    if T <= delay:
        raise ValueError(f"need more than delay={delay} frames, got T={T}")
    stack = np.zeros((T, F, D * taps), dtype=np.complex128)
    for k in range(taps):
        tau = delay + k
        if tau >= T:
            break
        stack[tau:, :, k * D:(k + 1) * D] = X[:T - tau]
    return stack


def psd_context_avg(Z, context: int = 1, psd_floor: float = 1e-10,
                    channels: Optional[Sequence[int]] = None) -> np.ndarray:
    """Channel- and context-averaged power ``lambda[t, f]``.

    ``channels`` restricts the channel average (``None`` uses all). Context
    windows are truncated at the signal edges and averaged over the frames
    that exist. The floor is applied after averaging.
    """
    Z, _ = _unwrap(Z)
    if channels is not None:
        Z = Z[:, :, list(channels)]
    power = np.mean(Z.real ** 2 + Z.imag ** 2, axis=2)
    T = power.shape[0]
    if context > 0:
        # shifted sums rather than a running cumsum: no cancellation in quiet frames
        acc = power.copy()
        for s in range(1, min(context, T - 1) + 1):
            acc[s:] += power[:-s]
            acc[:-s] += power[s:]
        t = np.arange(T)
        count = np.minimum(t + context, T - 1) - np.maximum(t - context, 0) + 1
        power = acc / count[:, None]
    return np.maximum(power, psd_floor)


def compute_correlations(stack, X, psd, backend=None):
    """Return ``R`` (F, DK, DK) and ``P`` (F, DK, D) weighted by ``1 / psd``."""
    X, _ = _unwrap(X)
    psd = np.asarray(psd, dtype=np.float64)
    if not np.isfinite(psd).all():
        raise ValueError("PSD contains non-finite values")
    if (psd <= 0).any():
        raise ValueError("PSD must be strictly positive; apply a floor first")
    R, P = kernels.weighted_correlations(
        np.transpose(stack, (1, 0, 2)), np.transpose(X, (1, 0, 2)), (1.0 / psd).T, backend)
    R = 0.5 * (R + np.conj(np.swapaxes(R, 1, 2)))
    return R, P


def loading_level(R: np.ndarray, diag_load: float) -> np.ndarray:
    """Per-frequency ridge ``diag_load * tr(R) / n_active``.

    ``n_active`` counts the strictly positive diagonal entries, so an
    all-zero input channel neither dilutes nor inflates the loading.
    """
    diag = np.real(np.einsum("fii->fi", R))
    active = np.maximum((diag > 0).sum(axis=1), 1)
    return diag_load * diag.sum(axis=1) / active


def solve_filters(R, P, diag_load: float = 1e-6, backend=None,
                  taps: Optional[int] = None) -> LpFilterBank:
    R = np.asarray(R, dtype=np.complex128)
    P = np.asarray(P, dtype=np.complex128)
    F, n, D = P.shape
    mu = loading_level(R, diag_load)
    A = R + mu[:, None, None] * np.eye(n)[None]
    G, failed = kernels.hermitian_solve(A, P, backend)
    if failed.any():
        log.warning("filter solve failed at %d of %d frequencies; using zero filters there",
                    int(failed.sum()), F)
    return LpFilterBank(G, taps if taps is not None else n // D, D, failed)


def filter_residual(R, P, G, diag_load: float = 1e-6) -> np.ndarray:
    """Relative residual ``||(R + mu I) G - P|| / ||P||`` for each frequency."""
    coeffs = G.coeffs if isinstance(G, LpFilterBank) else G
    n = R.shape[1]
    A = R + loading_level(R, diag_load)[:, None, None] * np.eye(n)[None]
    num = np.linalg.norm(A @ coeffs - P, axis=(1, 2))
    den = np.linalg.norm(P, axis=(1, 2))
    return num / np.where(den > 0, den, 1.0)


def apply_filters(X, stack, G):
    """``Z[t, f] = X[t, f] - G[f]^H stack[t, f]``."""
    data, like = _unwrap(X)
    coeffs = G.coeffs if isinstance(G, LpFilterBank) else np.asarray(G)
    late = np.einsum("fid,tfi->tfd", np.conj(coeffs), stack)
    return _wrap(data - late, like)


def _single_pass(X, stack, psd, cfg, backend):
    R, P = compute_correlations(stack, X, psd, backend)
    G = solve_filters(R, P, cfg.diag_load, backend, taps=cfg.taps)
    return apply_filters(X, stack, G), G


def _check_length(T, cfg):
    if T <= cfg.delay + cfg.taps:
        raise ValueError(f"need more than delay+taps={cfg.delay + cfg.taps} frames, got T={T}")


def wpe_iterative(X, cfg: WpeConfig = WpeConfig(),
                  psd_channels: Optional[Sequence[int]] = None, backend=None):
    """Iterative WPE; returns ``(Z, G)`` with all D output channels.

    ``psd_channels`` selects which output channels feed the PSD estimate
    (default: all of them).
    """
    data, like = _unwrap(X)
    _check_length(data.shape[0], cfg)
    stack = build_delayed_stack(data, cfg.delay, cfg.taps)
    Z = data
    G = None
    for _ in range(cfg.iterations):
        psd = psd_context_avg(Z, cfg.context, cfg.psd_floor, psd_channels)
        Z, G = _single_pass(data, stack, psd, cfg, backend)
    return _wrap(Z, like), G


def wpe_with_psd(X, psd, cfg: WpeConfig = WpeConfig(), backend=None):
    """Single-pass WPE with an externally supplied PSD of shape (T, F)."""
    data, like = _unwrap(X)
    psd = np.asarray(psd, dtype=np.float64)
    if psd.shape != data.shape[:2]:
        raise ValueError(f"PSD shape {psd.shape} does not match spectrogram {data.shape[:2]}")
    if (psd < 0).any() or not np.isfinite(psd).all():
        raise ValueError("PSD must be finite and non-negative")
    _check_length(data.shape[0], cfg)
    stack = build_delayed_stack(data, cfg.delay, cfg.taps)
    Z, G = _single_pass(data, stack, np.maximum(psd, cfg.psd_floor), cfg, backend)
    return _wrap(Z, like), G


def weighted_objective(X, stack, G, psd) -> np.ndarray:
    """Per (f, d) weighted prediction error ``sum_t |X - g^H x~|^2 / psd``."""
    data, _ = _unwrap(X)
    Z = apply_filters(data, stack, G)
    return np.einsum("tfd,tf->fd", np.abs(Z) ** 2, 1.0 / np.asarray(psd))
