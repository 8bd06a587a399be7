"""
Service module for the discrete OTFS transforms.
This module moves frames between the delay-Doppler (DD), time-frequency (TF)
and time domains and builds the DD convolution matrix used by the sensing
linear model.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from app.core.errors import GridMismatchError, UnsupportedPulseError
from app.schemas.grid import DDGrid


class Pulse(str, Enum):
    RECTANGULAR = "rectangular"


def _checked_matrix(grid: DDGrid, values, name: str) -> np.ndarray:
    array = np.array(values, dtype=complex)
    if array.shape != grid.shape:
        raise GridMismatchError(f"{name} has shape {array.shape}, grid expects {grid.shape}")
    if not np.all(np.isfinite(array)):
        raise ValueError(f"{name} contains non-finite entries")
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class DDFrame:
    """M x N symbol grid indexed [l, k] (delay, Doppler)."""

    grid: DDGrid
    symbols: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "symbols", _checked_matrix(self.grid, self.symbols, "DD frame"))

    @property
    def energy(self) -> float:
        return float(np.sum(np.abs(self.symbols) ** 2))


@dataclass(frozen=True)
class TFFrame:
    """M x N samples indexed [m, n] (subcarrier, time slot)."""

    grid: DDGrid
    samples: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "samples", _checked_matrix(self.grid, self.samples, "TF frame"))


@dataclass(frozen=True)
class DDVector:
    """Length-MN stacking of a DD frame, index l + M*k."""

    grid: DDGrid
    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=complex).reshape(-1)
        if data.size != self.grid.size:
            raise GridMismatchError(f"DD vector has length {data.size}, grid expects {self.grid.size}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)


@dataclass(frozen=True)
class TimeVector:
    """MN time-domain samples; slot n occupies samples [nM, nM + M - 1]."""

    grid: DDGrid
    samples: np.ndarray

    def __post_init__(self):
        samples = np.array(self.samples, dtype=complex).reshape(-1)
        if samples.size != self.grid.size:
            raise GridMismatchError(f"time signal has {samples.size} samples, grid expects {self.grid.size}")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)


def require_same_grid(first: DDGrid, second: DDGrid):
    if first != second:
        raise GridMismatchError(f"grid mismatch: {first} vs {second}")


def isfft(frame: DDFrame) -> TFFrame:
    # Sum over k carries exp(+j2pi nk/N), sum over l carries exp(-j2pi ml/M)
    samples = np.fft.fft(np.fft.ifft(frame.symbols, axis=1, norm="ortho"), axis=0, norm="ortho")
    return TFFrame(frame.grid, samples)


def sfft(frame: TFFrame) -> DDFrame:
    symbols = np.fft.ifft(np.fft.fft(frame.samples, axis=1, norm="ortho"), axis=0, norm="ortho")
    return DDFrame(frame.grid, symbols)


def heisenberg(frame: TFFrame, pulse: Pulse = Pulse.RECTANGULAR) -> TimeVector:
    """M-point inverse DFT per time slot, rectangular pulse, no cyclic prefix."""
    try:
        Pulse(pulse)
    except ValueError:
        raise UnsupportedPulseError(f"unsupported pulse: {pulse!r}") from None
    slots = np.fft.ifft(frame.samples, axis=0, norm="ortho")
    return TimeVector(frame.grid, slots.reshape(-1, order="F"))


def wigner(signal: TimeVector) -> TFFrame:
    slots = np.asarray(signal.samples).reshape(signal.grid.shape, order="F")
    return TFFrame(signal.grid, np.fft.fft(slots, axis=0, norm="ortho"))


def vectorize(frame: DDFrame) -> DDVector:
    return DDVector(frame.grid, frame.symbols.reshape(-1, order="F"))


def devectorize(vector: DDVector) -> DDFrame:
    return DDFrame(vector.grid, vector.data.reshape(vector.grid.shape, order="F"))


def dd_index(grid: DDGrid, l: int, k: int) -> int:
    return int(l) % grid.M + grid.M * (int(k) % grid.N)


def dd_coordinates(grid: DDGrid, index: int) -> tuple:
    return int(index) % grid.M, int(index) // grid.M


def build_X_matrix(frame: DDFrame) -> np.ndarray:
    """
    Block-circulant matrix X with X @ vectorize(h) equal to the twisted
    circular convolution of the frame with the DD kernel h.

    Entry [(l + M k), (l' + M k')] is X_DD[(l - l') mod M, (k - k') mod N].
    """
    grid = frame.grid
    index = np.arange(grid.size)
    l, k = index % grid.M, index // grid.M
    rows_l = (l[:, None] - l[None, :]) % grid.M
    rows_k = (k[:, None] - k[None, :]) % grid.N
    return frame.symbols[rows_l, rows_k]


def shift_frame(frame: DDFrame, l: int, k: int) -> DDFrame:
    """Circular shift so that out[l', k'] = in[(l' - l) mod M, (k' - k) mod N]."""
    return DDFrame(frame.grid, np.roll(frame.symbols, (int(l), int(k)), axis=(0, 1)))


def chirp_frame(grid: DDGrid, power: float = 1.0) -> DDFrame:
    """
    Separable unimodular Zadoff-Chu style frame. Its 2D DFT has flat
    magnitude, so X^H X = MN * power * I and every DD tap sees the same
    estimation variance.
    """

    def _chirp(length: int) -> np.ndarray:
        n = np.arange(length)
        return np.exp(1j * np.pi * n * (n + length % 2) / length)

    symbols = np.sqrt(power) * np.outer(_chirp(grid.M), _chirp(grid.N))
    return DDFrame(grid, symbols)
