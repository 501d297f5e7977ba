"""Baseband modulation and symbol-level demodulation for the 16 schemes.

Frames are built as cyclic tiles: the pulse-shaping filter is applied by
circular convolution, so every symbol in a frame is complete and a frame
can be circularly shifted without edge transients.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np


class Family(enum.Enum):
    PSK = "psk"
    APSK = "apsk"
    QAM = "qam"
    FSK = "fsk"


# (family, order) in dataset class order
_SCHEME_TABLE = (
    (Family.PSK, 2), (Family.PSK, 4), (Family.PSK, 8), (Family.PSK, 16),
    (Family.APSK, 16), (Family.APSK, 32), (Family.APSK, 64), (Family.APSK, 128),
    (Family.QAM, 16), (Family.QAM, 32), (Family.QAM, 64), (Family.QAM, 128),
    (Family.FSK, 2), (Family.FSK, 4), (Family.FSK, 8), (Family.FSK, 16),
)

_SHORT_NAMES = {
    (Family.PSK, 2): "bpsk",
    (Family.PSK, 4): "qpsk",
    (Family.FSK, 2): "bfsk",
    (Family.FSK, 4): "qfsk",
}

# APSK ring layouts: (points per ring, ring radii before power normalization)
APSK_RINGS = {
    16: ((4, 12), (1.0, 2.7)),
    32: ((4, 12, 16), (1.0, 2.84, 5.27)),
    64: ((4, 12, 20, 28), (1.0, 2.2, 3.4, 4.6)),
    128: ((6, 12, 18, 24, 30, 38), (1.0, 2.0, 3.0, 4.0, 5.0, 6.0)),
}


@dataclass(frozen=True)
class ModScheme:
    """A (family, order) pair from the supported scheme list."""

    family: Family
    order: int

    def __post_init__(self):
        if not isinstance(self.family, Family):
            object.__setattr__(self, "family", Family(self.family))
        if (self.family, self.order) not in _SCHEME_TABLE:
            raise ValueError(
                f"unsupported modulation scheme: family={self.family.value!r}, order={self.order}"
            )

    @property
    def bits_per_symbol(self) -> int:
        return int(self.order).bit_length() - 1

    @property
    def name(self) -> str:
        key = (self.family, self.order)
        return _SHORT_NAMES.get(key, f"{self.order}{self.family.value}")

    @classmethod
    def from_name(cls, name: str) -> "ModScheme":
        name = name.strip().lower()
        for scheme in SCHEMES:
            if scheme.name == name:
                return scheme
        raise ValueError(f"unknown modulation scheme name: {name!r}")

    def __str__(self) -> str:
        return self.name


SCHEMES: tuple[ModScheme, ...] = tuple(ModScheme(f, m) for f, m in _SCHEME_TABLE)


@dataclass(frozen=True)
class PulseShape:
    """Root-raised-cosine pulse parameters."""

    rolloff: float = 0.35
    span_symbols: int = 8
    sps: int = 4

    def __post_init__(self):
        if not 0.0 < self.rolloff <= 1.0:
            raise ValueError(f"rolloff must be in (0, 1], got {self.rolloff}")
        if self.span_symbols < 1 or self.sps < 1:
            raise ValueError("span_symbols and sps must be positive")

    @cached_property
    def taps(self) -> np.ndarray:
        return rrc_taps(self.rolloff, self.span_symbols, self.sps)


@dataclass(frozen=True, eq=False)
class Constellation:
    """Symbol alphabet.

    ``points[i]`` carries the bit pattern ``labels[i]`` (an integer whose
    binary expansion, MSB first, gives the bits).  For FSK the points are an
    abstract unit-circle alphabet indexed by tone number; the waveform uses
    the tone frequencies from :func:`fsk_tones`.
    """

    points: np.ndarray
    labels: np.ndarray
    bits_per_symbol: int

    @cached_property
    def table(self) -> np.ndarray:
        """Points indexed by label value."""
        out = np.empty_like(self.points)
        out[self.labels] = self.points
        return out

    @cached_property
    def bit_matrix(self) -> np.ndarray:
        """(M, k) bits of each label, MSB first."""
        return int_to_bits(self.labels, self.bits_per_symbol).reshape(-1, self.bits_per_symbol)


def gray(n):
    n = np.asarray(n)
    return n ^ (n >> 1)


def int_to_bits(values, k: int) -> np.ndarray:
    values = np.asarray(values, dtype=np.int64)
    shifts = np.arange(k - 1, -1, -1)
    return ((values[..., None] >> shifts) & 1).astype(np.uint8).reshape(-1)


def bits_to_int(bits, k: int) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.int64).reshape(-1, k)
    return bits @ (1 << np.arange(k - 1, -1, -1))


def _normalize(points: np.ndarray) -> np.ndarray:
    return points / np.sqrt(np.mean(np.abs(points) ** 2))


def _psk(order: int):
    offset = np.pi / 4 if order == 4 else 0.0
    idx = np.arange(order)
    return np.exp(1j * (2 * np.pi * idx / order + offset)), gray(idx)


def _rect_qam(bits_i: int, bits_q: int):
    ni, nq = 1 << bits_i, 1 << bits_q
    ii, qq = np.meshgrid(np.arange(ni), np.arange(nq), indexing="ij")
    ii, qq = ii.ravel(), qq.ravel()
    levels_i = 2 * ii - (ni - 1)
    levels_q = 2 * qq - (nq - 1)
    labels = (gray(ii) << bits_q) | gray(qq)
    return levels_i.astype(float), levels_q.astype(float), labels


def _qam(order: int):
    k = order.bit_length() - 1
    if k % 2 == 0:
        i, q, labels = _rect_qam(k // 2, k // 2)
        return i + 1j * q, labels
    # cross QAM: fold the outer columns of a 2^(b+1) x 2^b Gray rectangle
    # onto the top and bottom rows
    b = (k - 1) // 2
    i, q, labels = _rect_qam(b + 1, b)
    side = 3 * (1 << (b - 1))
    outer = np.abs(i) > side - 1
    shift = (1 << (b + 1)) - side
    pivot = 1 << b
    new_i = np.sign(i[outer]) * (pivot - np.abs(q[outer]))
    new_q = np.sign(q[outer]) * (np.abs(i[outer]) - shift)
    i, q = i.copy(), q.copy()
    i[outer], q[outer] = new_i, new_q
    return i + 1j * q, labels


def _apsk(order: int):
    counts, radii = APSK_RINGS[order]
    pts = []
    for n, r in zip(counts, radii):
        pts.append(r * np.exp(1j * (2 * np.pi * np.arange(n) / n + np.pi / n)))
    return np.concatenate(pts), gray(np.arange(order))


def _fsk(order: int):
    idx = np.arange(order)
    return np.exp(2j * np.pi * idx / order), gray(idx)


@lru_cache(maxsize=None)
def _cached_constellation(scheme: ModScheme) -> Constellation:
    builders = {Family.PSK: _psk, Family.APSK: _apsk, Family.QAM: _qam, Family.FSK: _fsk}
    points, labels = builders[scheme.family](scheme.order)
    points = _normalize(np.asarray(points, dtype=complex))
    points.setflags(write=False)
    labels = np.asarray(labels, dtype=np.int64)
    labels.setflags(write=False)
    return Constellation(points, labels, scheme.bits_per_symbol)


def build_constellation(scheme: ModScheme) -> Constellation:
    """Return the unit-power, bit-labeled alphabet for ``scheme``.

    PSK and square QAM are Gray labeled.  Cross QAM (32, 128) folds a Gray
    rectangle, APSK uses a reflected Gray code over ring-major angular order.
    """
    if not isinstance(scheme, ModScheme):
        raise TypeError(f"expected ModScheme, got {type(scheme).__name__}")
    return _cached_constellation(scheme)


def rrc_taps(rolloff: float, span_symbols: int, sps: int) -> np.ndarray:
    """Unit-energy root-raised-cosine taps, ``span_symbols * sps + 1`` long."""
    n = span_symbols * sps
    t = (np.arange(n + 1) - n / 2) / sps
    a = rolloff
    h = np.empty_like(t)
    for i, ti in enumerate(t):
        if np.isclose(ti, 0.0):
            h[i] = 1.0 - a + 4 * a / np.pi
        elif np.isclose(abs(ti), 1.0 / (4 * a)):
            h[i] = (a / np.sqrt(2)) * (
                (1 + 2 / np.pi) * np.sin(np.pi / (4 * a)) + (1 - 2 / np.pi) * np.cos(np.pi / (4 * a))
            )
        else:
            num = np.sin(np.pi * ti * (1 - a)) + 4 * a * ti * np.cos(np.pi * ti * (1 + a))
            den = np.pi * ti * (1 - (4 * a * ti) ** 2)
            h[i] = num / den
    # exact symmetry regardless of rounding in t
    h = 0.5 * (h + h[::-1])
    return h / np.sqrt(np.sum(h**2))


def fsk_tones(order: int, sps: int) -> np.ndarray:
    """Tone frequencies in cycles per sample, centred on DC.

    Spacing is one symbol rate when the band allows it, otherwise the
    largest spacing that keeps all tones inside the sampled band.
    """
    spacing = min(1.0, sps / order)  # cycles per symbol
    return (np.arange(order) - (order - 1) / 2) * spacing / sps


@lru_cache(maxsize=64)
def _circular_filter_response(taps_key: tuple, n: int) -> np.ndarray:
    taps = np.asarray(taps_key)
    centre = (len(taps) - 1) // 2
    h = np.zeros(n)
    np.add.at(h, (np.arange(len(taps)) - centre) % n, taps)
    return np.fft.fft(h)


def circular_filter(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Zero-phase circular convolution of ``x`` (last axis) with symmetric ``taps``."""
    H = _circular_filter_response(tuple(taps), x.shape[-1])
    return np.fft.ifft(np.fft.fft(x, axis=-1) * H, axis=-1)


def bits_per_frame(scheme: ModScheme, frame_len: int, sps: int) -> int:
    if frame_len % sps:
        raise ValueError(f"frame length {frame_len} is not a multiple of sps={sps}")
    return (frame_len // sps) * scheme.bits_per_symbol


def _symbol_indices(bits, k: int) -> np.ndarray:
    bits = np.asarray(bits)
    if bits.ndim != 1:
        raise ValueError("bits must be a 1-D vector")
    if bits.size == 0 or bits.size % k:
        raise ValueError(f"{bits.size} bits do not form an integer number of {k}-bit symbols")
    if np.any((bits != 0) & (bits != 1)):
        raise ValueError("bits must be 0 or 1")
    return bits_to_int(bits, k)


def map_symbols(bits, scheme: ModScheme) -> np.ndarray:
    """Bits to constellation symbols (no pulse shaping)."""
    const = build_constellation(scheme)
    return const.table[_symbol_indices(bits, const.bits_per_symbol)]


def modulate(bits, scheme: ModScheme, shape: PulseShape = PulseShape()) -> np.ndarray:
    """Modulate ``bits`` into a unit-power complex frame of ``n_symbols * sps`` samples."""
    k = scheme.bits_per_symbol
    idx = _symbol_indices(bits, k)
    sps = shape.sps
    if scheme.family is Family.FSK:
        freqs = fsk_tones(scheme.order, sps)[build_constellation(scheme).labels.argsort()]
        f = np.repeat(freqs[idx], sps)
        phase = 2 * np.pi * np.concatenate(([0.0], np.cumsum(f)[:-1]))
        frame = np.exp(1j * phase)
    else:
        symbols = build_constellation(scheme).table[idx]
        up = np.zeros(symbols.size * sps, dtype=complex)
        up[::sps] = symbols
        frame = circular_filter(up, shape.taps)
    return frame / np.sqrt(np.mean(np.abs(frame) ** 2))


def _nearest(y: np.ndarray, table: np.ndarray) -> np.ndarray:
    return np.argmin(np.abs(y[:, None] - table[None, :]) ** 2, axis=1)


def demodulate_symbols(frame, scheme: ModScheme, shape: PulseShape = PulseShape()) -> np.ndarray:
    """Hard-decision bits from a timing- and phase-aligned frame.

    Linear schemes: matched filter, symbol-rate sampling, a decision-directed
    real gain estimate, then minimum-distance decisions.  FSK: per-symbol
    tone-energy comparison.
    """
    frame = np.asarray(frame, dtype=complex)
    sps = shape.sps
    n_sym = frame.size // sps
    const = build_constellation(scheme)
    k = const.bits_per_symbol
    if scheme.family is Family.FSK:
        tones = fsk_tones(scheme.order, sps)
        n = np.arange(sps)
        basis = np.exp(-2j * np.pi * np.outer(tones, n))  # (M, sps)
        windows = frame[: n_sym * sps].reshape(n_sym, sps)
        energy = np.abs(windows @ basis.T) ** 2
        tone_idx = np.argmax(energy, axis=1)
        labels = const.labels[tone_idx]
        return int_to_bits(labels, k)

    y = circular_filter(frame, shape.taps)[: n_sym * sps : sps]
    power = np.mean(np.abs(y) ** 2)
    if power > 0:
        y = y / np.sqrt(power)
    table = const.table
    decided = _nearest(y, table)
    for _ in range(2):
        ref = table[decided]
        gain = np.real(np.vdot(ref, y)) / np.real(np.vdot(ref, ref))
        if not np.isfinite(gain) or gain <= 0:
            break
        refined = _nearest(y / gain, table)
        if np.array_equal(refined, decided):
            break
        decided = refined
    return int_to_bits(decided, k)
