#!/usr/bin/env python3
"""Independent reference for the pinned vectors.

Uses hashlib/zlib and libsodium's ristretto255 (through ctypes) instead of the
Rust code, then prints one JSON object per line. Output is frozen into
tests/data/reference_vectors.jsonl.
"""
import ctypes
import ctypes.util
import hashlib
import json
import struct
import zlib

Q = 2**252 + 27742317777372353535851937790883648493
sodium = ctypes.CDLL(ctypes.util.find_library("sodium") or "libsodium.so.23")
assert sodium.sodium_init() >= 0


def be_scalar(b: bytes) -> int:
    return int.from_bytes(b, "big") % Q


def s_be(x: int) -> bytes:
    return x.to_bytes(32, "big")


def from_hash(h64: bytes) -> bytes:
    out = ctypes.create_string_buffer(32)
    sodium.crypto_core_ristretto255_from_hash(out, h64)
    return out.raw


def mul(point: bytes, k: int) -> bytes:
    out = ctypes.create_string_buffer(32)
    rc = sodium.crypto_scalarmult_ristretto255(out, k.to_bytes(32, "little"), point)
    assert rc == 0
    return out.raw


def base_mul(k: int) -> bytes:
    out = ctypes.create_string_buffer(32)
    rc = sodium.crypto_scalarmult_ristretto255_base(out, k.to_bytes(32, "little"))
    assert rc == 0
    return out.raw


def add(p: bytes, q: bytes) -> bytes:
    out = ctypes.create_string_buffer(32)
    assert sodium.crypto_core_ristretto255_add(out, p, q) == 0
    return out.raw


class Transcript:
    def __init__(self):
        self.h = hashlib.sha512(b"cbdc-transcript/v1" + bytes([1]))

    @classmethod
    def with_domain(cls, d):
        t = cls()
        t.absorb(b"domain", d)
        return t

    def absorb(self, label, data):
        self.h.update(struct.pack(">I", len(label)) + label + struct.pack(">Q", len(data)) + data)

    def challenge(self, label):
        h = self.h.copy()
        h.update(b"challenge" + struct.pack(">I", len(label)) + label)
        out = h.digest()
        self.absorb(b"challenge-output", out)
        return be_scalar(out)


def h2g(tag, role, attempt=0):
    h = hashlib.sha512(b"hash-to-group/v1" + bytes([1]) + struct.pack(">I", len(tag)) + tag + role + struct.pack(">I", attempt))
    return from_hash(h.digest())


def sha256(*parts):
    return hashlib.sha256(b"".join(parts)).digest()


def frame(msg_type, payload):
    body = bytes([0xCB, 0xDC, 1, msg_type]) + struct.pack(">I", len(payload)) + payload
    return body + struct.pack(">I", zlib.crc32(body))


def main():
    lines = []
    emit = lines.append
    emit({"name": "suite", "suite_id": 1, "e_len": 32, "scalar_len": 32})

    emit({"name": "transcript_fresh_challenge", "label": "challenge",
          "challenge": s_be(Transcript().challenge(b"challenge")).hex()})

    g_val, g_blind = h2g(b"cbdc/v1", b"g_val"), h2g(b"cbdc/v1", b"g_blind")
    emit({"name": "generators", "tag": "cbdc/v1", "g_val": g_val.hex(), "g_blind": g_blind.hex()})

    r = be_scalar(hashlib.sha512(b"vector-blinding").digest())
    com = add(mul(g_val, 1200), mul(g_blind, r))
    emit({"name": "pedersen", "value": 1200, "blinding": s_be(r).hex(), "commitment": com.hex()})

    sk = be_scalar(hashlib.sha512(b"keypair/v1" + b"vector-key").digest())
    pk = base_mul(sk)
    msg = b"vector-message"
    nonce = be_scalar(hashlib.sha512(s_be(sk) + msg).digest())
    R = base_mul(nonce)
    t = Transcript.with_domain(b"schnorr-signature/v1")
    t.absorb(b"pk", pk)
    t.absorb(b"R", R)
    t.absorb(b"message", msg)
    c = t.challenge(b"c")
    s = (nonce + c * sk) % Q
    emit({"name": "schnorr", "seed": "vector-key", "message": msg.hex(), "pk": pk.hex(),
          "signature": (R + s_be(s)).hex()})
    emit({"name": "device_id", "pk": pk.hex(), "device_id": sha256(b"device-id/v1", pk)[:16].hex()})

    seed = bytes([0x11] * 32)
    nf = sha256(b"nullifier/v1", seed, struct.pack(">Q", 5))
    emit({"name": "nullifier", "prf_seed": seed.hex(), "counter": 5, "nullifier": nf.hex(),
          "tx_id": sha256(b"txid/v1", nf).hex()})

    dev = bytes([0x22] * 16)
    emit({"name": "genesis_head", "device_id": dev.hex(), "head": sha256(b"selog/v1", dev).hex()})

    entry = struct.pack(">Q", 0) + bytes([1]) + bytes([0x33] * 32) + bytes(32) + struct.pack(">q", 10000)
    emit({"name": "ledger_genesis", "prev_hash": bytes(32).hex(), "payload_hash": (bytes([0x33] * 32)).hex(),
          "amount_delta": 10000, "entry_hash": sha256(entry).hex()})

    emit({"name": "frame", "msg_type": 2, "payload": b"cbdc".hex(), "frame": frame(2, b"cbdc").hex()})
    for mtu in (255, 244):
        emit({"name": "chunking", "frame_len": 600, "mtu": mtu, "chunks": -(-600 // (mtu - 10))})

    for l in lines:
        print(json.dumps(l, sort_keys=True, separators=(",", ":")))


if __name__ == "__main__":
    main()
