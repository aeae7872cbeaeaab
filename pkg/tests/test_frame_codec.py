"""Frame codec, nonce construction and sequence-number bookkeeping."""
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from mbansec.errors import DecodeError, DecodeKind, EncodeError, SequenceExhausted
from mbansec.frame_codec import (
    HEADER_LEN, HIGH_MAX, LOW_MAX, NONCE_LEN, Accept, AssocProtocol, Cipher, Discard, DiscardReason, Frame,
    MIC_LENGTHS, FrameType, SecurityLevel, SecuritySuiteSelector, SequencePair, advance_sequence, build_nonce,
    check_replay, decode_frame, encode_frame, infer_sequence, is_hub, level_tag,
)

addresses = st.integers(min_value=0, max_value=0xFFFF)
pairs = st.builds(SequencePair, st.integers(0, HIGH_MAX), st.integers(0, LOW_MAX))


@st.composite
def frames(draw):
    level = draw(st.sampled_from(SecurityLevel))
    mic = b"" if level == SecurityLevel.unsecured else draw(st.sampled_from([8, 16]).flatmap(
        lambda n: st.binary(min_size=n, max_size=n)))
    return Frame(
        sender=draw(addresses),
        recipient=draw(addresses),
        frame_type=draw(st.sampled_from(FrameType)),
        level=level,
        seq=draw(pairs),
        key_id=draw(st.integers(0, 255)),
        payload=draw(st.binary(max_size=255)),
        mic=mic,
    )


class TestEncode:
    def test_header_layout(self):
        frame = Frame(sender=0x0102, recipient=0xFF00, frame_type=FrameType.data, level=SecurityLevel.auth_enc,
                      seq=SequencePair(7, 0x0304), key_id=9, payload=b"\xaa\xbb", mic=bytes(8))
        data = encode_frame(frame)
        assert data[:HEADER_LEN] == bytes.fromhex("0102ff00030209030402")
        assert data[HEADER_LEN:HEADER_LEN + 2] == b"\xaa\xbb"
        assert len(data) == HEADER_LEN + 2 + 8

    def test_high_order_sequence_is_not_on_air(self):
        a = Frame(1, 2, FrameType.data, SecurityLevel.unsecured, SequencePair(0, 5))
        b = Frame(1, 2, FrameType.data, SecurityLevel.unsecured, SequencePair(99, 5))
        assert encode_frame(a) == encode_frame(b)

    def test_oversized_payload(self):
        with pytest.raises(EncodeError):
            encode_frame(Frame(1, 2, FrameType.data, SecurityLevel.unsecured, payload=bytes(256)))

    def test_unsecured_frame_with_mic(self):
        with pytest.raises(EncodeError):
            encode_frame(Frame(1, 2, FrameType.data, SecurityLevel.unsecured, mic=bytes(8)))

    def test_secured_frame_needs_mic(self):
        with pytest.raises(EncodeError):
            encode_frame(Frame(1, 2, FrameType.data, SecurityLevel.auth_only))


class TestDecode:
    @given(frames())
    def test_round_trip(self, frame):
        assert decode_frame(encode_frame(frame), frame.seq.high) == frame

    def test_truncated_header(self):
        with pytest.raises(DecodeError) as e:
            decode_frame(bytes(HEADER_LEN - 1))
        assert e.value.kind == DecodeKind.truncated

    def test_truncated_payload(self):
        data = encode_frame(Frame(1, 2, FrameType.data, SecurityLevel.unsecured, payload=b"abcd"))
        with pytest.raises(DecodeError) as e:
            decode_frame(data[:-1])
        assert e.value.kind == DecodeKind.truncated

    def test_unknown_frame_type(self):
        data = bytearray(encode_frame(Frame(1, 2, FrameType.data, SecurityLevel.unsecured)))
        data[4] = 0x7F
        with pytest.raises(DecodeError) as e:
            decode_frame(bytes(data))
        assert e.value.kind == DecodeKind.malformed

    def test_trailing_octets_after_unsecured_frame(self):
        data = encode_frame(Frame(1, 2, FrameType.data, SecurityLevel.unsecured)) + b"\x00"
        with pytest.raises(DecodeError):
            decode_frame(data)

    @pytest.mark.parametrize("mic_len", [0, 4, 12])
    def test_secured_frame_with_bad_mic_length(self, mic_len):
        data = bytearray(encode_frame(Frame(1, 2, FrameType.data, SecurityLevel.unsecured, payload=b"abcd")))
        data[5] = int(SecurityLevel.auth_enc)
        with pytest.raises(DecodeError) as e:
            decode_frame(bytes(data) + bytes(mic_len))
        assert e.value.kind == DecodeKind.malformed

    def test_accepted_mic_lengths(self):
        assert MIC_LENGTHS == (8, 16)

    @given(st.binary(max_size=64))
    def test_arbitrary_octets_never_crash(self, data):
        try:
            decode_frame(data)
        except DecodeError:
            pass


class TestSequence:
    def test_advance_low(self):
        assert advance_sequence(SequencePair(3, 4)) == SequencePair(3, 5)

    def test_advance_wraps_low_into_high(self):
        assert advance_sequence(SequencePair(3, LOW_MAX)) == SequencePair(4, 0)

    def test_exhausted(self):
        with pytest.raises(SequenceExhausted):
            advance_sequence(SequencePair(HIGH_MAX, LOW_MAX))

    def test_out_of_range_pair(self):
        with pytest.raises(ValueError):
            SequencePair(0, LOW_MAX + 1)

    @given(pairs)
    def test_advance_is_strictly_increasing(self, seq):
        if seq == SequencePair(HIGH_MAX, LOW_MAX):
            return
        assert advance_sequence(seq) > seq

    def test_advance_matches_flat_counter(self):
        rng = random.Random(48)
        for _ in range(10000):
            flat = rng.randrange((HIGH_MAX << 16) | LOW_MAX)
            nxt = advance_sequence(SequencePair(flat >> 16, flat & LOW_MAX))
            assert nxt.flat() == flat + 1
            assert nxt == SequencePair((flat + 1) >> 16, (flat + 1) & LOW_MAX)

    def test_replay_verdicts(self):
        last = SequencePair(2, 10)
        assert isinstance(check_replay(last, SequencePair(2, 11)), Accept)
        assert check_replay(last, SequencePair(2, 10)) == Discard(DiscardReason.not_fresh)
        assert check_replay(last, SequencePair(2, 9)) == Discard(DiscardReason.not_fresh)
        assert check_replay(last, SequencePair(1, 60000)) == Discard(DiscardReason.high_wrap)
        assert isinstance(check_replay(last, SequencePair(3, 0)), Accept)

    def test_infer_same_high_when_low_grows(self):
        assert infer_sequence(SequencePair(5, 100), 101) == (SequencePair(5, 101), None)

    def test_infer_offers_rollover(self):
        same, rolled = infer_sequence(SequencePair(5, LOW_MAX), 0)
        assert same == SequencePair(5, 0)
        assert rolled == SequencePair(6, 0)

    def test_infer_rollover_at_high_max_reports_wrap(self):
        _, rolled = infer_sequence(SequencePair(HIGH_MAX, 3), 1)
        assert check_replay(SequencePair(HIGH_MAX, 3), rolled) == Discard(DiscardReason.high_wrap)


class TestNonce:
    def test_length_and_layout(self):
        nonce = build_nonce(0x0001, 0xFF00, level_tag(SecurityLevel.auth_enc, FrameType.data), SequencePair(1, 2))
        assert len(nonce) == NONCE_LEN
        assert nonce == bytes.fromhex("0001ff0023000000010002") + b"\x00\x00"

    @given(addresses, addresses, pairs, pairs)
    def test_injective_in_sequence(self, sender, recipient, s1, s2):
        tag = level_tag(SecurityLevel.auth_enc, FrameType.data)
        if s1 != s2:
            assert build_nonce(sender, recipient, tag, s1) != build_nonce(sender, recipient, tag, s2)


    def test_no_collisions_across_distinct_inputs(self):
        rng = random.Random(13)
        seen = {}
        for _ in range(20000):
            inputs = (rng.choice([0x0001, 0x0002, 0xFF00]), rng.choice([0x0001, 0xFF00, 0xFF01]),
                      level_tag(rng.choice(list(SecurityLevel)), rng.choice(list(FrameType))),
                      SequencePair(rng.randrange(4), rng.randrange(64)))
            nonce = build_nonce(*inputs)
            assert seen.setdefault(nonce, inputs) == inputs


class TestSuiteSelector:
    def test_round_trip(self):
        sss = SecuritySuiteSelector(SecurityLevel.auth_only, AssocProtocol.display, Cipher.aes256_ccm, True)
        assert SecuritySuiteSelector.decode(sss.encode()) == sss

    def test_unknown_flag_bits(self):
        with pytest.raises(DecodeError):
            SecuritySuiteSelector.decode(bytes([2, 1, 0, 2]))

    def test_roman_names(self):
        assert AssocProtocol.from_roman("iv") == AssocProtocol.password
        assert AssocProtocol.display.roman == "V"


def test_hub_address_range():
    assert is_hub(0xFF00) and is_hub(0xFFFF)
    assert not is_hub(0x0001)
