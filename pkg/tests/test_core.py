import math

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fingerloc.core import (
    DC_EXTRACTED_INDEX,
    EXTRACTED_COUNT,
    SUBCARRIER_COUNT,
    CsiPacket,
    FeatureVector,
    PacketRef,
    SubcarrierLayout,
    extract_features,
    unwrap_phase,
)
from fingerloc.errors import ValidationError

from conftest import make_packet

TWO_PI = 2.0 * math.pi


class TestSubcarrierLayout:
    def test_standard_counts(self):
        layout = SubcarrierLayout.standard_20mhz()
        kinds = list(layout.kinds)
        assert kinds.count("guard") == 7
        assert kinds.count("data") == 52
        assert kinds.count("pilot") == 4
        assert kinds.count("dc") == 1
        assert len(kinds) == SUBCARRIER_COUNT

    def test_dc_at_frequency_zero(self):
        layout = SubcarrierLayout.standard_20mhz()
        assert layout.kinds[32] == "dc"

    def test_extraction_is_contiguous_block(self):
        layout = SubcarrierLayout.standard_20mhz()
        freqs = layout.extracted_freq_indices()
        assert freqs.size == EXTRACTED_COUNT
        npt.assert_array_equal(freqs, np.arange(-28, 29))
        # DC lands at extracted position 28
        assert freqs[DC_EXTRACTED_INDEX] == 0

    def test_bad_counts_rejected(self):
        kinds = list(SubcarrierLayout.standard_20mhz().kinds)
        kinds[0] = "data"  # 8 guards -> 6, breaks the count
        with pytest.raises(ValidationError):
            SubcarrierLayout(kinds=tuple(kinds))


class TestCsiPacketValidation:
    def test_wrong_length_rejected(self):
        with pytest.raises(ValidationError, match="seq=7"):
            make_packet(values=np.ones(63, dtype=np.complex128), seq=7)

    def test_non_finite_rejected(self):
        values = np.ones(SUBCARRIER_COUNT, dtype=np.complex128)
        values[10] = np.nan + 1j
        with pytest.raises(ValidationError, match="non-finite"):
            make_packet(values=values, seq=3)

    def test_rssi_out_of_range_rejected(self):
        with pytest.raises(ValidationError, match="rssi"):
            make_packet(rssi=5.0)
        with pytest.raises(ValidationError, match="rssi"):
            make_packet(rssi=-150.0)

    def test_subcarriers_read_only(self):
        pkt = make_packet()
        with pytest.raises(ValueError):
            pkt.subcarriers[0] = 0


class TestExtractFeatures:
    def test_pythagorean_magnitude_and_atan2_phase(self):
        values = np.ones(SUBCARRIER_COUNT, dtype=np.complex128)
        values[4] = 3 + 4j  # frequency index -28, extracted position 0
        fv = extract_features(make_packet(values=values))
        assert fv.magnitude[0] == pytest.approx(5.0)
        # position 0 is never shifted by unwrapping
        assert fv.phase_rad[0] == pytest.approx(math.atan2(4, 3))
        assert fv.phase_rad[0] == pytest.approx(0.9272952180016122)

    def test_unit_diagonal_phase(self):
        values = np.ones(SUBCARRIER_COUNT, dtype=np.complex128)
        values[4] = 1 + 1j
        fv = extract_features(make_packet(values=values))
        assert fv.phase_rad[0] == pytest.approx(math.pi / 4)

    def test_dc_forced_to_zero(self):
        values = np.ones(SUBCARRIER_COUNT, dtype=np.complex128)
        values[32] = 7 + 2j  # frequency index 0
        fv = extract_features(make_packet(values=values))
        assert fv.magnitude[DC_EXTRACTED_INDEX] == 0.0
        assert fv.phase_rad[DC_EXTRACTED_INDEX] == 0.0

    def test_lengths_and_nonnegativity(self, rng):
        values = rng.standard_normal(64) + 1j * rng.standard_normal(64)
        fv = extract_features(make_packet(values=values))
        assert fv.magnitude.shape == (EXTRACTED_COUNT,)
        assert fv.phase_rad.shape == (EXTRACTED_COUNT,)
        assert (fv.magnitude >= 0).all()

    def test_unwrapped_phase_has_bounded_steps(self, rng):
        values = rng.standard_normal(64) + 1j * rng.standard_normal(64)
        fv = extract_features(make_packet(values=values))
        assert np.all(np.abs(np.diff(fv.phase_rad)) <= math.pi + 1e-9)

    def test_positive_scaling(self, rng):
        values = rng.standard_normal(64) + 1j * rng.standard_normal(64)
        s = 3.7
        fv1 = extract_features(make_packet(values=values))
        fv2 = extract_features(make_packet(values=values * s))
        npt.assert_allclose(fv2.magnitude, fv1.magnitude * s, rtol=1e-12)
        npt.assert_allclose(fv2.phase_rad, fv1.phase_rad, atol=1e-12)

    def test_source_reference(self):
        fv = extract_features(make_packet(seq=42, ap_id="AP3", location_id="RP09"))
        assert fv.source == PacketRef("AP3", "RP09", 42)


class TestUnwrapPhase:
    def test_small_diffs_unchanged(self):
        raw = np.array([0.1, 0.2, 0.3, 0.25, 0.4])
        npt.assert_array_equal(unwrap_phase(raw), raw)

    def test_single_jump(self):
        out = unwrap_phase([3.0, -3.0])
        npt.assert_allclose(out, [3.0, -3.0 + TWO_PI], rtol=0, atol=1e-15)
        assert out[1] == pytest.approx(3.2831853071795862)

    def test_jump_up_then_down(self):
        # Expected values computed with numpy's reference unwrap routine,
        # which applies the same cumulative 2-pi offsets.
        out = unwrap_phase([2.0, -2.0, 2.0])
        npt.assert_allclose(out, np.unwrap([2.0, -2.0, 2.0]), atol=1e-12)
        npt.assert_allclose(out, [2.0, 4.283185307179586, 2.0], atol=1e-12)

    def test_matches_reference_unwrap_on_random_input(self, rng):
        for _ in range(50):
            raw = rng.uniform(-math.pi, math.pi, size=57)
            npt.assert_allclose(unwrap_phase(raw), np.unwrap(raw), atol=1e-12)

    def test_first_element_preserved(self, rng):
        raw = rng.uniform(-math.pi, math.pi, size=57)
        assert unwrap_phase(raw)[0] == raw[0]

    def test_single_step_variant_does_not_carry(self):
        # With carry disabled only the element right after the jump moves.
        out = unwrap_phase([3.0, -3.0, -3.0], cumulative=False)
        npt.assert_allclose(out, [3.0, -3.0 + TWO_PI, -3.0], atol=1e-15)
        out_cum = unwrap_phase([3.0, -3.0, -3.0], cumulative=True)
        npt.assert_allclose(out_cum, [3.0, -3.0 + TWO_PI, -3.0 + TWO_PI], atol=1e-15)

    def test_rejects_bad_input(self):
        with pytest.raises(ValidationError):
            unwrap_phase([])
        with pytest.raises(ValidationError):
            unwrap_phase([1.0, np.nan])

    @given(
        arrays(
            np.float64,
            st.integers(min_value=1, max_value=57),
            elements=st.floats(
                min_value=-math.pi, max_value=math.pi, exclude_min=True, allow_nan=False
            ),
        )
    )
    @settings(max_examples=100, deadline=None)
    def test_offsets_are_integer_multiples_of_two_pi(self, raw):
        out = unwrap_phase(raw)
        multiples = (out - raw) / TWO_PI
        npt.assert_allclose(multiples, np.round(multiples), atol=1e-9)

    @given(
        arrays(
            np.float64,
            st.integers(min_value=2, max_value=57),
            elements=st.floats(
                min_value=-math.pi, max_value=math.pi, exclude_min=True, allow_nan=False
            ),
        )
    )
    @settings(max_examples=100, deadline=None)
    def test_output_diffs_bounded(self, raw):
        out = unwrap_phase(raw)
        assert np.all(np.abs(np.diff(out)) <= math.pi + 1e-9)

    @given(
        arrays(
            np.float64,
            st.integers(min_value=1, max_value=57),
            elements=st.floats(
                min_value=-math.pi, max_value=math.pi, exclude_min=True, allow_nan=False
            ),
        )
    )
    @settings(max_examples=100, deadline=None)
    def test_idempotent(self, raw):
        once = unwrap_phase(raw)
        npt.assert_array_equal(unwrap_phase(once), once)


class TestFeatureVectorInvariants:
    def test_wrong_length_rejected(self):
        with pytest.raises(ValidationError):
            FeatureVector(
                magnitude=np.ones(56),
                phase_rad=np.ones(56),
                source=PacketRef("a", "b", 0),
            )

    def test_arrays_read_only(self):
        fv = extract_features(make_packet())
        with pytest.raises(ValueError):
            fv.magnitude[0] = 1.0
