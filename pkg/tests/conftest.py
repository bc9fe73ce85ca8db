import numpy as np
import pytest

from fingerloc.core import EXTRACTED_COUNT, SUBCARRIER_COUNT, CsiPacket, FeatureVector, PacketRef


def make_packet(values=None, rssi=-50.0, seq=0, ap_id="AP1", location_id="RP01", timestamp=0):
    """Build a valid CsiPacket; defaults to a flat unit channel."""
    if values is None:
        values = np.ones(SUBCARRIER_COUNT, dtype=np.complex128)
    return CsiPacket(
        subcarriers=np.asarray(values, dtype=np.complex128),
        rssi_dbm=rssi,
        capture_timestamp=timestamp,
        sequence_no=seq,
        ap_id=ap_id,
        location_id=location_id,
    )


def make_feature(magnitude, phase=None, seq=0, location_id="RP01"):
    """Build a FeatureVector from a magnitude sequence (phase defaults to zeros)."""
    magnitude = np.asarray(magnitude, dtype=np.float64)
    if phase is None:
        phase = np.zeros(EXTRACTED_COUNT)
    return FeatureVector(
        magnitude=magnitude,
        phase_rad=np.asarray(phase, dtype=np.float64),
        source=PacketRef("AP1", location_id, seq),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
