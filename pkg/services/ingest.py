from dataclasses import dataclass, asdict
from typing import Dict, Any, Optional, Tuple
import logging
import math
import os

import numpy as np
import soundfile as sf
from scipy.signal import get_window

from .core_types import CovarianceSequence, FrequencyBank
from .errors import DataFormatError
from .file_io import read_toml
from .forward_model import ArrayGeometry

LOGGER = logging.getLogger("GSOT:INGEST")

WAV_MIME_TYPES = {"audio/x-wav", "audio/wav", "audio/vnd.wave", "audio/wave"}


@dataclass(frozen=True)
class IngestConfig:
    """
    STFT filter bank and covariance averaging settings.

    Args:
        sample_rate: Sampling rate in Hz
        window_length: Window length in seconds
        overlap: Fraction of overlap between consecutive frames
        window: Window name understood by scipy.signal.get_window
        band: (f_lo, f_hi) in Hz
        n_bins: Number of STFT bins retained within the band
        rho: Exponential averaging factor
        decimation: Frames per output time index; None targets 0.5 s per index
    """
    sample_rate: float
    window_length: float = 0.2
    overlap: float = 0.5
    window: str = "hann"
    band: Tuple[float, float] = (2000.0, 8000.0)
    n_bins: int = 61
    rho: float = 0.9
    decimation: Optional[int] = None

    def __post_init__(self):
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")
        if not 0.0 < self.overlap < 1.0:
            raise ValueError(f"overlap must lie in (0, 1), got {self.overlap}")
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho must lie in (0, 1), got {self.rho}")
        lo, hi = self.band
        if not 0 <= lo < hi <= self.sample_rate / 2:
            raise ValueError(f"band {self.band} must satisfy 0 <= f_lo < f_hi <= sample_rate/2")
        if self.n_bins < 1:
            raise ValueError("n_bins must be at least 1")
        if self.decimation is not None and self.decimation < 1:
            raise ValueError("decimation must be at least 1")
        if self.window_samples < 1 or self.hop_samples < 1:
            raise ValueError("window_length too short for the sample rate")

    @property
    def window_samples(self) -> int:
        return int(round(self.window_length * self.sample_rate))

    @property
    def hop_samples(self) -> int:
        return max(1, int(round(self.window_samples * (1.0 - self.overlap))))

    def resolved_decimation(self) -> int:
        if self.decimation is not None:
            return self.decimation
        return max(1, int(round(0.5 * self.sample_rate / self.hop_samples)))

    def to_dict(self) -> Dict[str, Any]:
        values = asdict(self)
        values['band'] = list(self.band)
        values['decimation'] = self.resolved_decimation()
        return values


def frame_count(length: int, window: int, hop: int) -> int:
    """Number of full frames, floor((L - W) / hop) + 1."""
    if length < window:
        return 0
    return (length - window) // hop + 1


def retained_bins(cfg: IngestConfig) -> np.ndarray:
    """DFT bin indices spaced uniformly (by index) within the band."""
    W = cfg.window_samples
    freqs = np.arange(W // 2 + 1) * cfg.sample_rate / W
    inside = np.nonzero((freqs >= cfg.band[0]) & (freqs <= cfg.band[1]) & (freqs > 0))[0]
    if inside.size == 0:
        raise ValueError(f"No STFT bin falls inside the band {cfg.band} Hz")
    if cfg.n_bins > inside.size:
        raise ValueError(f"Band holds {inside.size} bins, {cfg.n_bins} requested")
    picks = np.round(np.linspace(inside[0], inside[-1], cfg.n_bins)).astype(int)
    return np.unique(picks)


def stft_frames(signals: np.ndarray, cfg: IngestConfig) -> np.ndarray:
    """
    Windowed DFT coefficients of every channel.

    Returns:
        Complex array of shape (Q, M, W) with M frames
    """
    W, hop = cfg.window_samples, cfg.hop_samples
    frames = np.lib.stride_tricks.sliding_window_view(signals, W, axis=-1)[:, ::hop, :]
    window = get_window(cfg.window, W, fftbins=True)
    return np.fft.fft(frames * window, axis=-1)


def stft_covariances(signals: np.ndarray, cfg: IngestConfig) -> Tuple[CovarianceSequence, FrequencyBank]:
    """
    Exponentially averaged array covariances per retained STFT bin.

    Args:
        signals: Array of shape (Q, L), real or complex samples
        cfg: Ingest configuration

    Returns:
        Tuple of the covariance sequence (F, T, Q, Q) and the bank of
        angular frequencies 2 pi f_Hz in rad/s
    """
    signals = np.asarray(signals)
    if signals.ndim != 2:
        raise ValueError(f"Signals must have shape (Q, L), got {signals.shape}")
    Q, L = signals.shape
    W = cfg.window_samples
    if L < W:
        raise ValueError(f"Signals hold {L} samples, one window needs {W}")

    bins = retained_bins(cfg)
    spectra = stft_frames(signals, cfg)[:, :, bins]  # (Q, M, F)
    M = spectra.shape[1]
    decimation = cfg.resolved_decimation()
    T = M // decimation
    if T < 1:
        raise ValueError(f"{M} frames do not fill one output index of {decimation} frames")

    y = np.transpose(spectra, (2, 1, 0))  # (F, M, Q)
    R = np.einsum('fq,fp->fqp', y[:, 0], np.conj(y[:, 0]))
    out = np.empty((bins.size, T, Q, Q), dtype=complex)
    for m in range(M):
        if m > 0:
            R = cfg.rho * R + (1.0 - cfg.rho) * np.einsum('fq,fp->fqp', y[:, m], np.conj(y[:, m]))
        if (m + 1) % decimation == 0 and m < T * decimation:
            out[:, (m + 1) // decimation - 1] = R

    hz = bins * cfg.sample_rate / W
    LOGGER.info("Ingested Q=%d channels: %d frames -> T=%d, F=%d bins in [%.0f, %.0f] Hz",
                Q, M, T, bins.size, hz[0], hz[-1])
    return CovarianceSequence(out), FrequencyBank(2.0 * math.pi * hz, unit="rad/s")


def read_wav(path: str) -> Tuple[np.ndarray, float]:
    """
    Read a multichannel WAV file.

    Returns:
        Tuple (signals of shape (Q, L), sample rate in Hz)

    Raises:
        DataFormatError: if the file is not a readable WAV file
    """
    if not os.path.exists(path):
        raise DataFormatError(f"WAV file not found: {path}")
    import magic

    mime = magic.from_file(path, mime=True)
    if mime not in WAV_MIME_TYPES:
        raise DataFormatError(f"{path} is not a WAV file (detected {mime})")
    try:
        data, rate = sf.read(path, dtype='float64', always_2d=True)
    except Exception as e:
        raise DataFormatError(f"Reading {path} failed: {str(e)}") from e
    LOGGER.debug("Read %s: %d samples x %d channels at %d Hz", path, data.shape[0], data.shape[1], rate)
    return data.T.copy(), float(rate)


def load_geometry_sidecar(path: str) -> ArrayGeometry:
    """
    Load sensor positions from a TOML sidecar with keys `positions` (metres)
    and `propagation_speed` (m/s).
    """
    try:
        values = read_toml(path)
        return ArrayGeometry.from_positions(values['positions'], float(values['propagation_speed']))
    except KeyError as e:
        raise DataFormatError(f"Geometry sidecar {path} lacks key {e}") from e
    except ValueError as e:
        raise DataFormatError(f"Geometry sidecar {path} is invalid: {e}") from e
