"""Geometric multipath channel, beamforming codebook and beam selection.

The downlink signal of a user at subcarrier k is y = h_k^T f x + n with
h_k synthesized from geometric paths:

    h_k = sum_d sum_l alpha_l * exp(-j 2 pi k d / K) * p(d T_s - tau_l)
          * a(theta_l, phi_l)

with a truncated-sinc pulse p(t) = sinc(t / T_s) evaluated at the D cyclic
prefix taps. The array is a half-wavelength ULA steered in azimuth, with
elevation entering through a cos(phi) projection.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ValidationError

SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class Path:
    """One propagation path: complex gain (incl. path loss), delay and AoA."""

    gain: complex
    delay: float
    azimuth: float
    elevation: float = 0.0


@dataclass(frozen=True)
class OfdmConfig:
    """OFDM and array dimensions: K subcarriers, D-tap cyclic prefix,
    sampling time T_s, M antennas."""

    K: int = 32
    D: int = 16
    T_s: float = 5e-8
    M: int = 16

    def __post_init__(self):
        if self.K < 1 or self.D < 1 or self.M < 1:
            raise ConfigurationError(
                f"OfdmConfig needs K, D, M >= 1, got K={self.K} D={self.D} M={self.M}"
            )
        if self.T_s <= 0:
            raise ConfigurationError(f"OfdmConfig needs T_s > 0, got {self.T_s}")

    @property
    def max_delay(self):
        return self.D * self.T_s


@dataclass(frozen=True)
class Codebook:
    """Q unit-norm beamforming vectors of length M."""

    vectors: np.ndarray  # [Q, M] complex

    @property
    def Q(self):
        return self.vectors.shape[0]

    @property
    def M(self):
        return self.vectors.shape[1]

    def fingerprint(self):
        """Stable hex digest identifying this codebook (ties datasets to
        checkpoints)."""
        h = hashlib.sha256()
        h.update(np.int64(self.Q).tobytes())
        h.update(np.int64(self.M).tobytes())
        h.update(np.ascontiguousarray(self.vectors.astype(np.complex128)).tobytes())
        return h.hexdigest()[:16]


def steering_vector(azimuth, elevation, M):
    """Half-wavelength ULA response a_m = exp(j pi m sin(az) cos(el))."""
    if M < 1:
        raise ConfigurationError(f"steering_vector needs M >= 1, got {M}")
    m = np.arange(M)
    return np.exp(1j * np.pi * m * np.sin(azimuth) * np.cos(elevation))


def build_codebook(M, Q):
    """Q beams steering a uniform midpoint grid of [-pi/2, pi/2]."""
    if Q < 2:
        raise ConfigurationError(f"codebook size must be >= 2, got {Q}")
    if M < 1:
        raise ConfigurationError(f"antenna count must be >= 1, got {M}")
    angles = -np.pi / 2 + (np.arange(Q) + 0.5) * (np.pi / Q)
    vectors = np.stack([steering_vector(a, 0.0, M) / np.sqrt(M) for a in angles])
    return Codebook(vectors=vectors)


def codebook_angles(Q):
    """The azimuth grid used by build_codebook."""
    return -np.pi / 2 + (np.arange(Q) + 0.5) * (np.pi / Q)


def channel(paths, cfg):
    """K x M frequency-domain channel matrix from a list of Paths."""
    h = np.zeros((cfg.K, cfg.M), dtype=np.complex128)
    if not paths:
        return h
    for idx, p in enumerate(paths):
        if not (0.0 <= p.delay < cfg.max_delay):
            raise ValidationError(
                f"path {idx} delay {p.delay:.3e}s outside [0, D*T_s="
                f"{cfg.max_delay:.3e}s)"
            )
    d = np.arange(cfg.D)
    k = np.arange(cfg.K)
    dft = np.exp(-2j * np.pi * np.outer(k, d) / cfg.K)  # [K, D]
    for p in paths:
        taps = np.sinc(d - p.delay / cfg.T_s)  # p(d T_s - tau) with sinc pulse
        freq = dft @ taps  # [K]
        h += p.gain * np.outer(freq, steering_vector(p.azimuth, p.elevation, cfg.M))
    return h


def receive_signal(h_k, f, x, sigma2, rng=None):
    """y = h^T f x + n with n ~ CN(0, sigma2)."""
    if sigma2 < 0:
        raise ConfigurationError(f"noise variance must be >= 0, got {sigma2}")
    y = np.dot(h_k, f) * x
    if sigma2 > 0:
        if rng is None:
            raise ValidationError("receive_signal with sigma2 > 0 needs an rng")
        s = np.sqrt(sigma2 / 2.0)
        y = y + rng.normal(0.0, s) + 1j * rng.normal(0.0, s)
    return y


def beam_power(H, cb):
    """Total received power per beam: P_m = sum_k |h_k^T f_m|^2."""
    proj = H @ cb.vectors.T  # [K, Q]
    return np.sum(np.abs(proj) ** 2, axis=0)


def beam_select(H, cb):
    """Index of the codebook beam maximizing total power over subcarriers;
    ties resolve to the lowest index."""
    if H.shape[1] != cb.M:
        raise ValidationError(
            f"channel has {H.shape[1]} antennas but codebook expects {cb.M}"
        )
    return int(np.argmax(beam_power(H, cb)))
