"""Wire codec and channels.

One canonical encoding for every protocol message: a 4-byte big-endian length
prefix, a version byte (0x01), a 16-byte session id, a message type byte, and
a canonical-JSON payload (UTF-8, sorted keys, no insignificant whitespace).
Public keys and images travel as lowercase hex strings. Trapdoors are not
part of the message vocabulary and never touch the wire.

Two transports share the codec byte-for-byte: an in-process FIFO pair and a
framed TCP stream; a transcript recorded over one replays over the other.
"""
from __future__ import annotations

import json
import socket
import struct
from collections import deque

import numpy as np

from . import entcf, protocol
from .errors import TransportError

VERSION = 0x01
SESSION_ID_BYTES = 16
_HEADER = 1 + SESSION_ID_BYTES + 1  # version + session id + type byte

_TYPE_BYTES = {cls: i + 1 for i, cls in enumerate(protocol.MESSAGE_TYPES)}
_TYPE_CLASSES = {v: k for k, v in _TYPE_BYTES.items()}


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


class Codec:
    """Message <-> frame translation for a fixed parameter set."""

    def __init__(self, params: entcf.EntcfParams):
        self.params = params

    # -- image coordinates ---------------------------------------------------
    def encode_y(self, y_i) -> str:
        if self.params.backend == "ideal":
            return struct.pack(">I", int(y_i)).hex()
        return b"".join(struct.pack(">I", int(c)) for c in y_i).hex()

    def decode_y(self, text: str):
        raw = bytes.fromhex(text)
        if self.params.backend == "ideal":
            if len(raw) != 4:
                raise TransportError("bad image encoding length")
            return struct.unpack(">I", raw)[0]
        if len(raw) != 4 * self.params.m:
            raise TransportError("bad image encoding length")
        return tuple(struct.unpack(f">{self.params.m}I", raw))

    # -- message payloads ------------------------------------------------------
    def to_payload(self, msg) -> dict:
        if isinstance(msg, protocol.Keys):
            return {"keys": [k.to_bytes().hex() for k in msg.keys]}
        if isinstance(msg, protocol.Images):
            return {"y": [self.encode_y(y) for y in msg.y]}
        if isinstance(msg, protocol.RoundType):
            return {"kind": msg.kind}
        if isinstance(msg, protocol.PreimageAnswer):
            return {"b": [int(b) for b in msg.b], "x": [int(x) for x in msg.x]}
        if isinstance(msg, protocol.HadamardD):
            return {"d": [int(d) for d in msg.d]}
        if isinstance(msg, protocol.Question):
            return {"q": int(msg.q)}
        if isinstance(msg, protocol.FinalAnswer):
            return {"v": [int(v) for v in msg.v]}
        if isinstance(msg, protocol.Verdict):
            return {"accept": int(msg.accept), "reason": msg.reason}
        raise TransportError(f"unknown message type {type(msg).__name__}")

    def from_payload(self, cls, payload: dict):
        try:
            if cls is protocol.Keys:
                return protocol.Keys(
                    keys=tuple(entcf.PublicKey.from_bytes(bytes.fromhex(h)) for h in payload["keys"])
                )
            if cls is protocol.Images:
                return protocol.Images(y=tuple(self.decode_y(t) for t in payload["y"]))
            if cls is protocol.RoundType:
                return protocol.RoundType(kind=payload["kind"])
            if cls is protocol.PreimageAnswer:
                return protocol.PreimageAnswer(
                    b=tuple(int(b) for b in payload["b"]),
                    x=tuple(int(x) for x in payload["x"]),
                )
            if cls is protocol.HadamardD:
                return protocol.HadamardD(d=tuple(int(d) for d in payload["d"]))
            if cls is protocol.Question:
                return protocol.Question(q=int(payload["q"]))
            if cls is protocol.FinalAnswer:
                return protocol.FinalAnswer(v=tuple(int(v) for v in payload["v"]))
            if cls is protocol.Verdict:
                return protocol.Verdict(accept=int(payload["accept"]), reason=payload["reason"])
        except (KeyError, ValueError, TypeError) as exc:
            raise TransportError(f"malformed payload: {exc}") from exc
        raise TransportError("unknown message type byte")

    # -- frames ---------------------------------------------------------------
    def encode_frame(self, session_id: bytes, msg) -> bytes:
        if len(session_id) != SESSION_ID_BYTES:
            raise TransportError("session id must be 16 bytes")
        body = (
            bytes([VERSION])
            + session_id
            + bytes([_TYPE_BYTES[type(msg)]])
            + _canonical_json(self.to_payload(msg))
        )
        return struct.pack(">I", len(body)) + body

    def decode_frame(self, frame: bytes):
        """(session_id, message) from one complete frame."""
        if len(frame) < 4:
            raise TransportError("truncated frame")
        (length,) = struct.unpack(">I", frame[:4])
        if len(frame) != 4 + length or length < _HEADER:
            raise TransportError("frame length mismatch")
        body = frame[4:]
        if body[0] != VERSION:
            raise TransportError(f"unknown wire version {body[0]}")
        session_id = body[1 : 1 + SESSION_ID_BYTES]
        type_byte = body[1 + SESSION_ID_BYTES]
        if type_byte not in _TYPE_CLASSES:
            raise TransportError("unknown message type byte")
        try:
            payload = json.loads(body[_HEADER:].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise TransportError(f"bad payload JSON: {exc}") from exc
        return session_id, self.from_payload(_TYPE_CLASSES[type_byte], payload)


# ---------------------------------------------------------------------------
# Channels
# ---------------------------------------------------------------------------

class InProcChannel:
    """One endpoint of an in-process FIFO pair; frames are still produced so
    the bytes match the TCP transport exactly."""

    def __init__(self, codec: Codec, session_id: bytes, inbox: deque, outbox: deque):
        self.codec = codec
        self.session_id = session_id
        self._inbox = inbox
        self._outbox = outbox
        self.open = True

    @classmethod
    def pair(cls, codec: Codec, session_id: bytes):
        a_to_b: deque = deque()
        b_to_a: deque = deque()
        return (
            cls(codec, session_id, b_to_a, a_to_b),
            cls(codec, session_id, a_to_b, b_to_a),
        )

    def send(self, msg) -> None:
        if not self.open:
            raise TransportError("channel closed")
        self._outbox.append(self.codec.encode_frame(self.session_id, msg))

    def recv(self, timeout: float | None = None):
        if not self.open:
            raise TransportError("channel closed")
        if not self._inbox:
            raise TransportError("recv on empty in-process channel (would deadlock)")
        session_id, msg = self.codec.decode_frame(self._inbox.popleft())
        if session_id != self.session_id:
            raise TransportError("session id mismatch")
        return msg

    def close(self) -> None:
        self.open = False


class TcpChannel:
    """Framed messages over a connected socket."""

    def __init__(self, codec: Codec, session_id: bytes, sock: socket.socket):
        self.codec = codec
        self.session_id = session_id
        self.sock = sock
        self.open = True

    def send(self, msg) -> None:
        if not self.open:
            raise TransportError("channel closed")
        self.sock.sendall(self.codec.encode_frame(self.session_id, msg))

    def _read_exact(self, nbytes: int) -> bytes:
        chunks = b""
        while len(chunks) < nbytes:
            try:
                chunk = self.sock.recv(nbytes - len(chunks))
            except socket.timeout as exc:
                raise TransportError("recv timeout") from exc
            if not chunk:
                raise TransportError("connection closed mid-frame")
            chunks += chunk
        return chunks

    def recv(self, timeout: float | None = None):
        if not self.open:
            raise TransportError("channel closed")
        self.sock.settimeout(timeout)
        head = self._read_exact(4)
        (length,) = struct.unpack(">I", head)
        body = self._read_exact(length)
        session_id, msg = self.codec.decode_frame(head + body)
        if session_id != self.session_id:
            raise TransportError("session id mismatch")
        return msg

    def close(self) -> None:
        self.open = False
        try:
            self.sock.close()
        except OSError:
            pass


def session_id_from_rng(rng: np.random.Generator) -> bytes:
    return rng.bytes(SESSION_ID_BYTES)
