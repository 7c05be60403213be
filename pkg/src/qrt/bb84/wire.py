"""Framing of Alice's post-processing messages.

Every message is ``type:u8 | seq:u16 | declared_len:u32 | payload`` (big
endian).  Payloads:

* SIFT    ``n_rounds:u32 | packed Alice basis bits``
* PARITY  ``pass_index:u16 | block_size:u32 | n_answers:u32 | packed answers``
* DIGEST  ``digest:u64``

Bits are packed MSB first, zero padded to a whole byte.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

HEADER = struct.Struct(">BHI")
SIFT_HEAD = struct.Struct(">I")
PARITY_HEAD = struct.Struct(">HII")
DIGEST_BODY = struct.Struct(">Q")


class MsgType(IntEnum):
    SIFT = 1
    PARITY = 2
    DIGEST = 3


class FrameError(ValueError):
    """Raised on any message that does not parse under the framing rules."""


@dataclass(frozen=True)
class Frame:
    type: int
    seq: int
    declared_len: int
    payload: bytes

    @property
    def length_consistent(self) -> bool:
        return self.declared_len == len(self.payload)


def pack_bits(bits) -> bytes:
    return np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes()


def unpack_bits(data: bytes, count: int) -> np.ndarray:
    return np.unpackbits(np.frombuffer(data, dtype=np.uint8))[:count].astype(np.int8)


def encode(msg_type: MsgType, seq: int, payload: bytes) -> bytes:
    return HEADER.pack(int(msg_type), seq & 0xFFFF, len(payload)) + payload


def parse_frame(raw: bytes) -> Frame:
    """Split a raw message into header fields and the bytes that follow.

    No consistency check is made here; callers decide how strict to be.
    """
    if len(raw) < HEADER.size:
        raise FrameError(f"message shorter than header ({len(raw)} bytes)")
    msg_type, seq, declared = HEADER.unpack_from(raw)
    return Frame(msg_type, seq, declared, bytes(raw[HEADER.size:]))


def encode_sift(seq: int, alice_bases) -> bytes:
    bases = np.asarray(alice_bases)
    return encode(MsgType.SIFT, seq, SIFT_HEAD.pack(len(bases)) + pack_bits(bases))


def encode_parity(seq: int, pass_index: int, block_size: int, answers: list[int]) -> bytes:
    body = PARITY_HEAD.pack(pass_index, block_size, len(answers)) + pack_bits(answers)
    return encode(MsgType.PARITY, seq, body)


def encode_digest(seq: int, digest: int) -> bytes:
    return encode(MsgType.DIGEST, seq, DIGEST_BODY.pack(digest))


def strict_frame_valid(raw: bytes, expected_seq: int) -> bool:
    """Reference framing check used as an external invariant monitor."""
    try:
        frame = parse_frame(raw)
    except FrameError:
        return False
    if frame.type not in (MsgType.SIFT, MsgType.PARITY, MsgType.DIGEST):
        return False
    return frame.length_consistent and frame.seq == expected_seq
