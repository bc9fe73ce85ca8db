"""Core CSI domain types and deterministic feature math.

A captured 802.11ac 20 MHz symbol carries 64 subcarriers ordered by
frequency index -32..+31. Seven edge guards and the band edges are
discarded; the contiguous block -28..+28 (52 data + 4 pilots + the
zeroed DC bin, 57 values) is what fingerprinting works on. From each
packet we derive a two-sequence feature: per-subcarrier magnitude and
unwrapped phase.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ValidationError

SUBCARRIER_COUNT = 64
EXTRACTED_COUNT = 57
MIN_FREQ_INDEX = -32
MAX_FREQ_INDEX = 31
# Position of the DC bin inside the extracted -28..+28 block.
DC_EXTRACTED_INDEX = 28

GUARD = "guard"
PILOT = "pilot"
DATA = "data"
DC = "dc"

# 20 MHz band / 64 bins.
SUBCARRIER_SPACING_HZ = 312_500.0


def _freq_to_pos(k: int) -> int:
    """Map frequency index -32..+31 to array position 0..63."""
    return k - MIN_FREQ_INDEX


@dataclass(frozen=True)
class SubcarrierLayout:
    """Classification of the 64 subcarrier slots of a 20 MHz symbol.

    ``kinds[p]`` gives the role of the slot at array position ``p``,
    where position ``p`` holds frequency index ``p - 32``.
    """

    kinds: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.kinds) != SUBCARRIER_COUNT:
            raise ValidationError(
                f"layout must classify {SUBCARRIER_COUNT} slots, got {len(self.kinds)}"
            )
        counts = {kind: self.kinds.count(kind) for kind in (GUARD, DATA, PILOT, DC)}
        expected = {GUARD: 7, DATA: 52, PILOT: 4, DC: 1}
        if counts != expected:
            raise ValidationError(f"slot counts {counts} != required {expected}")
        if self.kinds[_freq_to_pos(0)] != DC:
            raise ValidationError("DC slot must sit at frequency index 0")
        mask = self.extraction_mask()
        lo, hi = _freq_to_pos(-28), _freq_to_pos(28)
        if not (mask[lo : hi + 1].all() and mask.sum() == EXTRACTED_COUNT):
            raise ValidationError("extracted slots must be the contiguous block -28..+28")

    @classmethod
    def standard_20mhz(cls) -> "SubcarrierLayout":
        """The usual 20 MHz allocation: guards at the band edges
        {-32..-29, +29..+31}, pilots at {-21, -7, +7, +21}, DC at 0,
        data everywhere else in -28..+28."""
        kinds = [DATA] * SUBCARRIER_COUNT
        for k in (-32, -31, -30, -29, 29, 30, 31):
            kinds[_freq_to_pos(k)] = GUARD
        for k in (-21, -7, 7, 21):
            kinds[_freq_to_pos(k)] = PILOT
        kinds[_freq_to_pos(0)] = DC
        return cls(kinds=tuple(kinds))

    def extraction_mask(self) -> np.ndarray:
        """Boolean mask over the 64 positions selecting the 57 kept slots."""
        return np.array([kind != GUARD for kind in self.kinds], dtype=bool)

    def extracted_freq_indices(self) -> np.ndarray:
        """Frequency indices (-28..+28) of the extracted slots, in order."""
        return np.flatnonzero(self.extraction_mask()) + MIN_FREQ_INDEX


class PacketRef(NamedTuple):
    """Lightweight handle identifying where a feature vector came from."""

    ap_id: str
    location_id: str
    sequence_no: int


@dataclass(frozen=True)
class CsiPacket:
    """One received symbol: 64 complex subcarrier values plus metadata.

    ``subcarriers`` is ordered by frequency index -32..+31 and stored as
    complex128 (values are float32-representable when they came off the
    wire format, which keeps save/load round trips exact).
    """

    subcarriers: np.ndarray
    rssi_dbm: float
    capture_timestamp: int
    sequence_no: int
    ap_id: str
    location_id: str

    def __post_init__(self) -> None:
        arr = np.array(self.subcarriers, dtype=np.complex128)
        if arr.shape != (SUBCARRIER_COUNT,):
            raise ValidationError(
                f"packet seq={self.sequence_no}: expected {SUBCARRIER_COUNT} "
                f"subcarriers, got shape {arr.shape}"
            )
        if not (np.isfinite(arr.real).all() and np.isfinite(arr.imag).all()):
            raise ValidationError(
                f"packet seq={self.sequence_no}: non-finite subcarrier values"
            )
        if not math.isfinite(self.rssi_dbm) or not (-120.0 <= self.rssi_dbm <= 0.0):
            raise ValidationError(
                f"packet seq={self.sequence_no}: rssi {self.rssi_dbm} dBm outside [-120, 0]"
            )
        arr.flags.writeable = False
        object.__setattr__(self, "subcarriers", arr)

    def ref(self) -> PacketRef:
        return PacketRef(self.ap_id, self.location_id, self.sequence_no)


@dataclass(frozen=True)
class FeatureVector:
    """Per-packet fingerprint feature: 57 magnitudes and 57 unwrapped phases."""

    magnitude: np.ndarray
    phase_rad: np.ndarray
    source: PacketRef

    def __post_init__(self) -> None:
        mag = np.array(self.magnitude, dtype=np.float64)
        pha = np.array(self.phase_rad, dtype=np.float64)
        if mag.shape != (EXTRACTED_COUNT,) or pha.shape != (EXTRACTED_COUNT,):
            raise ValidationError(
                f"feature arrays must have length {EXTRACTED_COUNT}, "
                f"got {mag.shape} and {pha.shape}"
            )
        mag.flags.writeable = False
        pha.flags.writeable = False
        object.__setattr__(self, "magnitude", mag)
        object.__setattr__(self, "phase_rad", pha)


def unwrap_phase(raw_phase: Sequence[float] | np.ndarray, cumulative: bool = True) -> np.ndarray:
    """Remove 2-pi jumps from a phase sequence along the subcarrier axis.

    Whenever the raw difference between consecutive entries exceeds pi
    the correction is -2*pi, and when it falls below -pi the correction
    is +2*pi (differences of exactly +-pi stay as they are, which keeps
    the operation idempotent). With ``cumulative=True`` (the default)
    each correction carries forward to every later entry, which is what
    produces a continuous ramp; ``cumulative=False`` applies each
    correction to the immediately following entry only, for comparison.
    """
    phase = np.asarray(raw_phase, dtype=np.float64)
    if phase.ndim != 1 or phase.size == 0:
        raise ValidationError("phase input must be a non-empty 1-D array")
    if not np.isfinite(phase).all():
        raise ValidationError("phase input contains non-finite values")

    diffs = np.diff(phase)
    steps = np.zeros_like(diffs)
    steps[diffs > math.pi] = -2.0 * math.pi
    steps[diffs < -math.pi] = 2.0 * math.pi

    corrections = np.concatenate(([0.0], np.cumsum(steps) if cumulative else steps))
    return phase + corrections


def extract_features(packet: CsiPacket, layout: SubcarrierLayout | None = None) -> FeatureVector:
    """Turn a validated packet into its magnitude/phase feature pair.

    Magnitude is sqrt(re^2 + im^2) and raw phase is atan2(im, re) for
    the 57 extracted slots; the DC entry is forced to (0, 0) before the
    phase sequence is unwrapped.
    """
    if layout is None:
        layout = SubcarrierLayout.standard_20mhz()
    values = packet.subcarriers[layout.extraction_mask()]
    magnitude = np.abs(values)
    raw_phase = np.arctan2(values.imag, values.real)
    magnitude[DC_EXTRACTED_INDEX] = 0.0
    raw_phase[DC_EXTRACTED_INDEX] = 0.0
    return FeatureVector(
        magnitude=magnitude,
        phase_rad=unwrap_phase(raw_phase),
        source=packet.ref(),
    )
