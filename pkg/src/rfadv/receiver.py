"""Minimal correlation receiver and BER accounting.

Timing, phase and amplitude come from the peak of the circular
cross-correlation against the known transmitted frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import circular_shift
from .modem import ModScheme, PulseShape, demodulate_symbols


@dataclass(frozen=True)
class SyncEstimate:
    timing_offset: int
    phase: float
    amplitude: float
    peak_correlation: float


@dataclass(frozen=True)
class BerEntry:
    scheme: str
    bits_compared: int
    bit_errors: int

    @property
    def ber(self) -> float:
        return self.bit_errors / self.bits_compared if self.bits_compared else 0.0


@dataclass
class BerReport:
    entries: list[BerEntry] = field(default_factory=list)

    def add(self, entry: BerEntry) -> None:
        self.entries.append(entry)

    def per_scheme(self) -> dict[str, BerEntry]:
        merged: dict[str, list[int]] = {}
        for e in self.entries:
            acc = merged.setdefault(e.scheme, [0, 0])
            acc[0] += e.bits_compared
            acc[1] += e.bit_errors
        return {k: BerEntry(k, n, err) for k, (n, err) in merged.items()}

    @property
    def bits_compared(self) -> int:
        return sum(e.bits_compared for e in self.entries)

    @property
    def bit_errors(self) -> int:
        return sum(e.bit_errors for e in self.entries)

    @property
    def ber(self) -> float:
        """Bit-weighted aggregate BER."""
        n = self.bits_compared
        return self.bit_errors / n if n else 0.0


def circular_xcorr(tx_ref, rx) -> np.ndarray:
    """``c[k] = sum_n rx[n] * conj(tx_ref[n - k])`` for every circular lag ``k``."""
    return np.fft.ifft(np.fft.fft(rx) * np.conj(np.fft.fft(tx_ref)))


def correlate_sync(tx_ref, rx) -> SyncEstimate:
    tx_ref = np.asarray(tx_ref, dtype=complex)
    rx = np.asarray(rx, dtype=complex)
    if tx_ref.shape != rx.shape or tx_ref.ndim != 1:
        raise ValueError(f"frame shapes differ: {tx_ref.shape} vs {rx.shape}")
    energy = np.real(np.vdot(tx_ref, tx_ref))
    if energy <= 0:
        raise ValueError("reference frame has zero power")
    c = circular_xcorr(tx_ref, rx)
    k = int(np.argmax(np.abs(c)))
    peak = c[k]
    amplitude = abs(peak) / energy
    if amplitude <= 0:
        # uncorrelated rx; keep the estimate usable
        amplitude = np.finfo(float).tiny
    return SyncEstimate(k, float(np.angle(peak)), float(amplitude), float(abs(peak)))


def equalize(rx, est: SyncEstimate) -> np.ndarray:
    """Undo the delay, rotation and gain described by ``est``."""
    aligned = circular_shift(np.asarray(rx, dtype=complex), -est.timing_offset)
    return aligned * np.exp(-1j * est.phase) / est.amplitude


def measure_ber(tx_bits, rx_bits, scheme: str = "") -> BerEntry:
    tx_bits = np.asarray(tx_bits).ravel()
    rx_bits = np.asarray(rx_bits).ravel()
    if tx_bits.shape != rx_bits.shape:
        raise ValueError(f"bit streams differ in length: {tx_bits.size} vs {rx_bits.size}")
    return BerEntry(scheme, int(tx_bits.size), int(np.count_nonzero(tx_bits != rx_bits)))


def decode_chain(tx_frame, tx_bits, rx_frame, scheme: ModScheme,
                 shape: PulseShape = PulseShape()) -> BerEntry:
    """Sync on the known transmission, demodulate, and count bit errors."""
    est = correlate_sync(tx_frame, rx_frame)
    bits = demodulate_symbols(equalize(rx_frame, est), scheme, shape)
    return measure_ber(tx_bits, bits, scheme.name)
