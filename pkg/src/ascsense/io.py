"""Binary interchange formats.

CSI dump (magic ``ASCS``): little-endian header
``{magic 4s, version u16, M u16, K u32, T u32, subcarrier_spacing f64,
snapshot_interval f64}`` followed by T columns of M*K interleaved
(re, im) f64 pairs.

Reference blob (magic ``ASCR``): little-endian header
``{magic 4s, version u16, M u16, K u32, flags u16, n_exchanges u32,
timestamp_noise_std f64, clock_error f64}`` followed by M*K interleaved
(re, im) f64 pairs.  Flag bit 0 marks a relative-only reference; a NaN
clock error means "not estimated".
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CSI_MAGIC = b"ASCS"
REF_MAGIC = b"ASCR"
CSI_VERSION = 1
REF_VERSION = 1

_CSI_HEADER = struct.Struct("<4sHHIIdd")
_REF_HEADER = struct.Struct("<4sHHIHIdd")


@dataclass(frozen=True)
class CsiDumpHeader:
    n_antennas: int
    n_subcarriers: int
    n_snapshots: int
    subcarrier_spacing: float
    snapshot_interval: float


def write_csi_dump(path, data: np.ndarray, n_antennas: int, subcarrier_spacing: float,
                   snapshot_interval: float) -> None:
    """Write a [M*K, T] complex snapshot matrix to a CSI dump file."""
    data = np.asarray(data, dtype=complex)
    rows, n_snapshots = data.shape
    if rows % n_antennas != 0:
        raise ValueError("row count must be a multiple of the antenna count")
    header = _CSI_HEADER.pack(CSI_MAGIC, CSI_VERSION, n_antennas, rows // n_antennas,
                              n_snapshots, float(subcarrier_spacing), float(snapshot_interval))
    interleaved = np.empty((n_snapshots, rows, 2), dtype="<f8")
    interleaved[:, :, 0] = data.T.real
    interleaved[:, :, 1] = data.T.imag
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(interleaved.tobytes())


def read_csi_dump(path) -> tuple[CsiDumpHeader, np.ndarray]:
    """Read a CSI dump file back into (header, [M*K, T] complex matrix)."""
    raw = Path(path).read_bytes()
    if len(raw) < _CSI_HEADER.size:
        raise ValueError(f"{path}: truncated CSI dump header")
    magic, version, m, k, t, df, dt = _CSI_HEADER.unpack_from(raw)
    if magic != CSI_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != CSI_VERSION:
        raise ValueError(f"{path}: unsupported CSI dump version {version}")
    expected = _CSI_HEADER.size + t * m * k * 2 * 8
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(raw)}")
    flat = np.frombuffer(raw, dtype="<f8", offset=_CSI_HEADER.size)
    interleaved = flat.reshape(t, m * k, 2)
    data = (interleaved[:, :, 0] + 1j * interleaved[:, :, 1]).T.copy()
    return CsiDumpHeader(m, k, t, df, dt), data


def write_reference_blob(path, response: np.ndarray, n_antennas: int, n_exchanges: int,
                         timestamp_noise_std: float, clock_error: float | None,
                         relative_only: bool) -> None:
    """Write an acquired static-paths reference to a small binary blob."""
    response = np.asarray(response, dtype=complex).ravel()
    if response.size % n_antennas != 0:
        raise ValueError("response length must be a multiple of the antenna count")
    flags = 1 if relative_only else 0
    clock = float("nan") if clock_error is None else float(clock_error)
    header = _REF_HEADER.pack(REF_MAGIC, REF_VERSION, n_antennas,
                              response.size // n_antennas, flags, int(n_exchanges),
                              float(timestamp_noise_std), clock)
    interleaved = np.empty((response.size, 2), dtype="<f8")
    interleaved[:, 0] = response.real
    interleaved[:, 1] = response.imag
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(interleaved.tobytes())


def read_reference_blob(path) -> dict:
    """Read a reference blob into a plain dict of its fields."""
    raw = Path(path).read_bytes()
    if len(raw) < _REF_HEADER.size:
        raise ValueError(f"{path}: truncated reference header")
    magic, version, m, k, flags, n_exchanges, ts_noise, clock = _REF_HEADER.unpack_from(raw)
    if magic != REF_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != REF_VERSION:
        raise ValueError(f"{path}: unsupported reference version {version}")
    expected = _REF_HEADER.size + m * k * 2 * 8
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(raw)}")
    flat = np.frombuffer(raw, dtype="<f8", offset=_REF_HEADER.size).reshape(m * k, 2)
    response = flat[:, 0] + 1j * flat[:, 1]
    return {
        "response": response,
        "n_antennas": m,
        "n_subcarriers": k,
        "n_exchanges": n_exchanges,
        "timestamp_noise_std": ts_noise,
        "clock_error": None if np.isnan(clock) else clock,
        "relative_only": bool(flags & 1),
    }
