"""
Readers and writers for covariance, spectrum, RMSE and report files.

Covariance files start with the 8-byte magic b"GSOTCOV1", a little-endian
uint64 header length and a UTF-8 JSON header (Q, F, T, grid, bank, geometry,
endianness, seed). The payload follows as little-endian float64: for every
(f, t) in f-major order, vec(Re R) then vec(Im R), both column-major.
"""
from dataclasses import dataclass, field
from typing import Dict, Any, List, Optional
import csv
import json
import struct
import sys

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .core_types import AngularGrid, CovarianceSequence, FrequencyBank, SpatioTemporalSpectrum
from .errors import DataFormatError
from .forward_model import ArrayGeometry, vectorize_sequence

COVARIANCE_MAGIC = b"GSOTCOV1"
FORMAT_VERSION = 1


@dataclass
class CovarianceFile:
    data: CovarianceSequence
    grid: Optional[AngularGrid] = None
    bank: Optional[FrequencyBank] = None
    geometry: Optional[ArrayGeometry] = None
    seed: Optional[int] = None
    metadata: Dict[str, Any] = field(default_factory=dict)


def read_toml(path: str) -> Dict[str, Any]:
    try:
        with open(path, 'rb') as handle:
            return tomllib.load(handle)
    except tomllib.TOMLDecodeError as e:
        raise DataFormatError(f"Parsing {path} failed: {str(e)}") from e


def _header(record: CovarianceFile) -> Dict[str, Any]:
    data = record.data
    return {
        'format': 'gsot-covariance',
        'version': FORMAT_VERSION,
        'endianness': 'little',
        'dtype': 'float64',
        'layout': 'f-major over (f, t); vec(Re R) then vec(Im R), column-major',
        'Q': data.n_sensors,
        'F': data.n_freqs,
        'T': data.n_times,
        'grid': None if record.grid is None else record.grid.points.tolist(),
        'bank': None if record.bank is None else record.bank.omegas.tolist(),
        'bank_unit': None if record.bank is None else record.bank.unit,
        'geometry': None if record.geometry is None else {
            'positions': record.geometry.positions.tolist(),
            'propagation_speed': record.geometry.propagation_speed,
        },
        'seed': record.seed,
        'metadata': record.metadata,
    }


def _from_header(header: Dict[str, Any], R: np.ndarray) -> CovarianceFile:
    try:
        grid = None if header.get('grid') is None else AngularGrid(np.asarray(header['grid']))
        bank = None if header.get('bank') is None else FrequencyBank(
            np.asarray(header['bank']), unit=header.get('bank_unit') or "rad/sample")
        geometry = None
        if header.get('geometry') is not None:
            geometry = ArrayGeometry(np.asarray(header['geometry']['positions']),
                                     float(header['geometry']['propagation_speed']))
        return CovarianceFile(data=CovarianceSequence(R), grid=grid, bank=bank, geometry=geometry,
                              seed=header.get('seed'), metadata=header.get('metadata') or {})
    except (KeyError, TypeError, ValueError) as e:
        raise DataFormatError(f"Invalid covariance header: {str(e)}") from e


def write_covariance_file(path: str, record: CovarianceFile) -> None:
    """Write the binary covariance format (bit-exact round trip)."""
    header = json.dumps(_header(record), sort_keys=True).encode('utf-8')
    payload = vectorize_sequence(record.data.R).astype('<f8').tobytes()
    with open(path, 'wb') as handle:
        handle.write(COVARIANCE_MAGIC)
        handle.write(struct.pack('<Q', len(header)))
        handle.write(header)
        handle.write(payload)


def read_covariance_file(path: str) -> CovarianceFile:
    """Read a covariance file in the binary format or its JSON variant (.json)."""
    if path.endswith('.json'):
        return read_covariance_json(path)
    with open(path, 'rb') as handle:
        blob = handle.read()
    if blob[:8] != COVARIANCE_MAGIC:
        raise DataFormatError(f"{path} is not a covariance file")
    try:
        (length,) = struct.unpack('<Q', blob[8:16])
        header = json.loads(blob[16:16 + length].decode('utf-8'))
        Q, F, T = int(header['Q']), int(header['F']), int(header['T'])
    except (struct.error, ValueError, KeyError) as e:
        raise DataFormatError(f"Corrupt covariance header in {path}: {str(e)}") from e
    payload = np.frombuffer(blob[16 + length:], dtype='<f8')
    if payload.size != F * T * 2 * Q * Q:
        raise DataFormatError(f"{path}: payload holds {payload.size} values, expected {F * T * 2 * Q * Q}")
    flat = payload.reshape(F, T, 2 * Q * Q).astype(float)
    half = Q * Q
    R = (flat[..., :half] + 1j * flat[..., half:]).reshape(F, T, Q, Q)
    return _from_header(header, np.swapaxes(R, -1, -2))


def write_covariance_json(path: str, record: CovarianceFile) -> None:
    """Human-readable debug variant of the covariance file."""
    content = _header(record)
    content['real'] = record.data.R.real.tolist()
    content['imag'] = record.data.R.imag.tolist()
    with open(path, 'w') as handle:
        json.dump(content, handle, sort_keys=True)


def read_covariance_json(path: str) -> CovarianceFile:
    try:
        with open(path) as handle:
            content = json.load(handle)
        R = np.asarray(content['real'], dtype=float) + 1j * np.asarray(content['imag'], dtype=float)
    except (ValueError, KeyError) as e:
        raise DataFormatError(f"Reading {path} failed: {str(e)}") from e
    return _from_header(content, R)


def _fmt(value: float) -> str:
    return repr(float(value))


def _comment(seed: Optional[int], extra: Dict[str, Any]) -> str:
    parts = [f"seed={seed}"] + [f"{key}={value}" for key, value in extra.items()]
    return "# " + " ".join(parts) + "\n"


def write_spectrum_csv(path: str, spectrum: SpatioTemporalSpectrum, seed: Optional[int] = None,
                       **extra: Any) -> None:
    """Long-format CSV with one row per (t, f, theta)."""
    theta = spectrum.grid.degrees
    omegas = spectrum.bank.omegas
    with open(path, 'w', newline='') as handle:
        handle.write(_comment(seed, {**extra, 'unit': spectrum.bank.unit}))
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(['t', 'f', 'omega', 'theta_deg', 'power'])
        F, T, N = spectrum.phi.shape
        for t in range(T):
            for f in range(F):
                for i in range(N):
                    writer.writerow([t, f, _fmt(omegas[f]), _fmt(theta[i]), _fmt(spectrum.phi[f, t, i])])


def read_spectrum_csv(path: str) -> SpatioTemporalSpectrum:
    """Inverse of write_spectrum_csv; files without a unit comment read as rad/sample."""
    with open(path, newline='') as handle:
        lines = handle.readlines()
    header = dict(part.split('=', 1) for line in lines if line.startswith('#')
                  for part in line[1:].split() if '=' in part)
    rows = list(csv.reader(line for line in lines if not line.startswith('#')))
    try:
        body = [(int(t), int(f), float(w), float(th), float(p)) for t, f, w, th, p in rows[1:]]
    except ValueError as e:
        raise DataFormatError(f"Malformed spectrum CSV {path}: {str(e)}") from e
    T = 1 + max(r[0] for r in body)
    F = 1 + max(r[1] for r in body)
    omegas = np.zeros(F)
    thetas = {}
    phi = {}
    for t, f, w, th, p in body:
        omegas[f] = w
        thetas.setdefault(th, len(thetas))
        phi[(f, t, thetas[th])] = p
    N = len(thetas)
    values = np.zeros((F, T, N))
    for (f, t, i), p in phi.items():
        values[f, t, i] = p
    grid = AngularGrid.from_degrees(sorted(thetas, key=thetas.get))
    bank = FrequencyBank(omegas, unit=header.get('unit', 'rad/sample'))
    return SpatioTemporalSpectrum(phi=values, grid=grid, bank=bank)


def write_spatial_csv(path: str, spatial: np.ndarray, grid: AngularGrid, seed: Optional[int] = None,
                      **extra: Any) -> None:
    """Frequency-averaged spectrum, one row per (t, theta)."""
    with open(path, 'w', newline='') as handle:
        handle.write(_comment(seed, extra))
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(['t', 'theta_deg', 'power'])
        for t in range(spatial.shape[0]):
            for i, theta in enumerate(grid.degrees):
                writer.writerow([t, _fmt(theta), _fmt(spatial[t, i])])


def write_temporal_csv(path: str, temporal: np.ndarray, bank: FrequencyBank, seed: Optional[int] = None,
                       **extra: Any) -> None:
    """Angle-integrated, time-averaged power per frequency."""
    with open(path, 'w', newline='') as handle:
        handle.write(_comment(seed, extra))
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(['f', 'omega', 'power'])
        for f, omega in enumerate(bank.omegas):
            writer.writerow([f, _fmt(omega), _fmt(temporal[f])])


def write_spectrum_json(path: str, spectrum: SpatioTemporalSpectrum, seed: Optional[int] = None,
                        **extra: Any) -> None:
    content = {
        'seed': seed,
        'theta_deg': spectrum.grid.degrees.tolist(),
        'omega': spectrum.bank.omegas.tolist(),
        'phi': spectrum.phi.tolist(),
        **extra,
    }
    with open(path, 'w') as handle:
        json.dump(content, handle, sort_keys=True)


def write_rmse_csv(path: str, rows: List[Dict[str, Any]], seed: Optional[int] = None, **extra: Any) -> None:
    with open(path, 'w', newline='') as handle:
        handle.write(_comment(seed, extra))
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(['snr_db', 'method', 'rmse_rad', 'rmse_deg', 'trials'])
        for row in rows:
            writer.writerow([_fmt(row['snr_db']), row['method'], _fmt(row['rmse_rad']),
                             _fmt(row['rmse_deg']), row['trials']])


def write_json(path: str, content: Dict[str, Any]) -> None:
    with open(path, 'w') as handle:
        json.dump(content, handle, indent=2, sort_keys=True, default=_json_default)
        handle.write('\n')


def _json_default(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, tuple):
        return list(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")
