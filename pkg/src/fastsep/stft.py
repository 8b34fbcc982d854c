"""Forward/inverse STFT for multichannel waveforms.

Waveforms are float arrays of shape (n_samples, n_channels); spectrograms
are complex arrays of shape (F, T, M) with F = window_length // 2 + 1.
Analysis and synthesis both use a periodic Hann window; synthesis divides
by the summed squared window, which gives perfect reconstruction for
hop <= window_length // 2 (COLA).
"""

import numpy as np

from .errors import InvalidInputError


def hann_periodic(n: int) -> np.ndarray:
    """Periodic Hann window of length n."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def _validate_params(window_length, hop):
    if window_length <= 0 or (window_length & (window_length - 1)) != 0:
        raise InvalidInputError(f"window_length must be a power of two, got {window_length}")
    if not 0 < hop <= window_length:
        raise InvalidInputError(f"hop must satisfy 0 < hop <= window_length, got {hop}")


def stft(waveform: np.ndarray, window_length: int = 1024, hop: int = 256) -> np.ndarray:
    """Multichannel STFT, reflect-padded by window_length // 2 on both ends.

    Returns a complex array of shape (F, T, M).
    """
    _validate_params(window_length, hop)
    w = np.atleast_2d(np.asarray(waveform, dtype=np.float64))
    if w.shape[0] == 1 and waveform.ndim == 1:
        w = w.T
    n_samples, _ = w.shape
    if n_samples < window_length:
        raise InvalidInputError(
            f"signal length {n_samples} is shorter than one window ({window_length})"
        )
    pad = window_length // 2
    padded = np.pad(w, ((pad, pad), (0, 0)), mode="reflect")
    n_frames = 1 + int(np.ceil((padded.shape[0] - window_length) / hop))
    total = window_length + (n_frames - 1) * hop
    padded = np.pad(padded, ((0, total - padded.shape[0]), (0, 0)))
    frames = np.lib.stride_tricks.sliding_window_view(padded, window_length, axis=0)[::hop]
    spec = np.fft.rfft(frames * hann_periodic(window_length)[None, None, :], axis=-1)
    return np.ascontiguousarray(spec.transpose(2, 0, 1))  # (F, T, M)


def istft(
    spectrogram: np.ndarray,
    window_length: int = 1024,
    hop: int = 256,
    length: int | None = None,
) -> np.ndarray:
    """Inverse STFT by windowed overlap-add; undoes the stft() padding.

    ``length`` trims the result to the original sample count; when omitted
    the full de-padded signal is returned.
    """
    _validate_params(window_length, hop)
    spec = np.asarray(spectrogram)
    if spec.ndim != 3:
        raise InvalidInputError(f"spectrogram must have shape (F, T, M), got {spec.shape}")
    n_freq, n_frames, _ = spec.shape
    if n_freq != window_length // 2 + 1:
        raise InvalidInputError(
            f"spectrogram has {n_freq} bins; window_length {window_length} implies "
            f"{window_length // 2 + 1}"
        )
    window = hann_periodic(window_length)
    frames = np.fft.irfft(spec.transpose(1, 2, 0), n=window_length, axis=-1)
    total = window_length + (n_frames - 1) * hop
    out = np.zeros((total, spec.shape[2]))
    norm = np.zeros(total)
    win_sq = window * window
    for t in range(n_frames):
        sl = slice(t * hop, t * hop + window_length)
        out[sl] += frames[t].T * window[:, None]
        norm[sl] += win_sq
    out /= np.maximum(norm, np.finfo(float).tiny)[:, None]
    pad = window_length // 2
    out = out[pad:-pad] if pad else out
    if length is not None:
        if length > out.shape[0]:
            raise InvalidInputError(
                f"requested length {length} exceeds reconstructable {out.shape[0]}"
            )
        out = out[:length]
    return out
