"""Field serialization: a small binary container plus a lossless JSON form.

Binary layout (little endian): magic b"TKFC", u32 version, u32 n_max,
u32 collocation_size, u8 zero_average, then (2n+1)^2 complex128 coefficients
in row-major k order (k1 fastest-varying last).
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import ConfigError
from .spectral import Lattice, StatePair, TorusField

_MAGIC = b"TKFC"
_VERSION = 1


def field_to_bytes(u: TorusField) -> bytes:
    head = _MAGIC + struct.pack(
        "<IIIB", _VERSION, u.lattice.n_max, u.lattice.collocation_size,
        1 if u.zero_average else 0,
    )
    return head + np.ascontiguousarray(u.coeffs, dtype=np.complex128).tobytes()


def field_from_bytes(buf: bytes) -> TorusField:
    if buf[:4] != _MAGIC:
        raise ConfigError("bad magic in field container")
    version, n_max, colloc, zavg = struct.unpack("<IIIB", buf[4:17])
    if version != _VERSION:
        raise ConfigError("unsupported field container version %d" % version)
    lat = Lattice(n_max, colloc)
    n = lat.size
    data = np.frombuffer(buf[17:], dtype=np.complex128)
    if data.size != n * n:
        raise ConfigError("field container payload has %d coefficients, expected %d"
                          % (data.size, n * n))
    return TorusField(lat, data.reshape(n, n).copy(), bool(zavg))


def save_field(path, u: TorusField) -> None:
    with open(path, "wb") as fh:
        fh.write(field_to_bytes(u))


def load_field(path) -> TorusField:
    with open(path, "rb") as fh:
        return field_from_bytes(fh.read())


def field_to_json_obj(u: TorusField) -> dict:
    n = u.lattice.n_max
    entries = []
    for i in range(u.lattice.size):
        for j in range(u.lattice.size):
            c = u.coeffs[i, j]
            if c != 0:
                entries.append([i - n, j - n, c.real, c.imag])
    return {
        "n_max": n,
        "collocation_size": u.lattice.collocation_size,
        "zero_average": u.zero_average,
        "coeffs": entries,
    }


def field_from_json_obj(obj: dict) -> TorusField:
    lat = Lattice(int(obj["n_max"]), int(obj.get("collocation_size", 0)))
    f = TorusField.zeros(lat, bool(obj.get("zero_average", False)))
    n = lat.n_max
    for k1, k2, re, im in obj["coeffs"]:
        f.coeffs[int(k1) + n, int(k2) + n] = complex(re, im)
    return f


def save_field_json(path, u: TorusField) -> None:
    with open(path, "w") as fh:
        json.dump(field_to_json_obj(u), fh)


def load_field_json(path) -> TorusField:
    with open(path) as fh:
        return field_from_json_obj(json.load(fh))


def save_state(path, state: StatePair) -> None:
    """Two concatenated field containers, length-prefixed."""
    b1 = field_to_bytes(state.omega_field)
    b2 = field_to_bytes(state.current_field)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(b1)))
        fh.write(b1)
        fh.write(struct.pack("<Q", len(b2)))
        fh.write(b2)


def load_state(path) -> StatePair:
    with open(path, "rb") as fh:
        buf = fh.read()
    n1 = struct.unpack("<Q", buf[:8])[0]
    f1 = field_from_bytes(buf[8:8 + n1])
    off = 8 + n1
    n2 = struct.unpack("<Q", buf[off:off + 8])[0]
    f2 = field_from_bytes(buf[off + 8:off + 8 + n2])
    return StatePair(f1, f2)
