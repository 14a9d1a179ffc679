"""Pseudo-Zernike basis, moments and magnitude features on the camera disk.

Only ``m >= 0`` moments are stored: for a real image the ``m < 0`` moments
are complex conjugates of the ``m > 0`` ones and carry the same magnitude.
Up to order ``n_max`` that leaves ``(n_max + 1)(n_max + 2) / 2`` features
(36 for ``n_max = 7``) out of ``(n_max + 1)**2`` signed basis functions.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .camera import CameraGeometry, CherenkovImage, DiskMapping, hexagon_vertices
from .errors import DataFormatError, InvalidArgument

DEFAULT_N_MAX = 7
BASIS_MAGIC = b"PZRT"


def nm_pairs(n_max: int) -> list[tuple[int, int]]:
    """Canonical ``(n, m)`` order: n ascending, then m ascending."""
    return [(n, m) for n in range(n_max + 1) for m in range(n + 1)]


def signed_nm_pairs(n_max: int) -> list[tuple[int, int]]:
    return [(n, m) for n in range(n_max + 1) for m in range(-n, n + 1)]


def n_features(n_max: int) -> int:
    return (n_max + 1) * (n_max + 2) // 2


@lru_cache(maxsize=None)
def radial_coefficients(n: int, m: int) -> tuple[int, ...]:
    """Integer coefficients of rho**k for k = n, n-1, ..., m (highest power first)."""
    if not 0 <= m <= n:
        raise InvalidArgument(f"need 0 <= m <= n, got n={n}, m={m}")
    f = math.factorial
    return tuple(
        (-1) ** s * f(2 * n + 1 - s) // (f(s) * f(n - m - s) * f(n + m + 1 - s))
        for s in range(n - m + 1)
    )


def _radial(n: int, m: int, rho):
    acc = 0.0
    for c in radial_coefficients(n, m):
        acc = acc * rho + float(c)
    return acc * rho**m


def radial_polynomial(n: int, m: int, rho):
    """Pseudo-Zernike radial polynomial R_nm(rho), Horner form.

    Accepts a scalar or array ``rho`` in [0, 1].
    """
    if not 0 <= m <= n:
        raise InvalidArgument(f"need 0 <= m <= n, got n={n}, m={m}")
    r = np.asarray(rho, dtype=float)
    if np.any(r < 0) or np.any(r > 1) or np.any(np.isnan(r)):
        raise InvalidArgument("rho must lie in [0, 1]")
    out = _radial(n, m, r)
    return float(out) if np.ndim(out) == 0 else out


def basis_function(n: int, m: int, rho, theta):
    """V_nm(rho, theta) = R_n|m|(rho) * exp(i m theta)."""
    return _radial(n, abs(m), np.asarray(rho, dtype=float)) * np.exp(1j * m * np.asarray(theta))


@dataclass(frozen=True)
class BasisTable:
    """Per pixel and (n, m): (n+1)/pi * R_nm(rho) * exp(-i m theta) * dA.

    ``values`` has shape ``(n_pixels, n_pairs)`` (pixel-major).
    """

    n_max: int
    values: np.ndarray  # complex128

    @property
    def n_pixels(self) -> int:
        return self.values.shape[0]

    @property
    def n_pairs(self) -> int:
        return self.values.shape[1]

    @property
    def re(self) -> np.ndarray:
        return self.values.real

    @property
    def im(self) -> np.ndarray:
        return self.values.imag


def build_basis_table(mapping: DiskMapping, n_max: int = DEFAULT_N_MAX) -> BasisTable:
    if n_max < 0:
        raise InvalidArgument("n_max must be >= 0")
    pairs = nm_pairs(n_max)
    vals = np.empty((mapping.n_pixels, len(pairs)), dtype=complex)
    for k, (n, m) in enumerate(pairs):
        r = _radial(n, m, mapping.rho)
        # cos/sin evaluated separately so m = 0 gives an exact zero imaginary part
        vals[:, k] = ((n + 1) / math.pi) * r * mapping.pixel_weight * (
            np.cos(m * mapping.theta) - 1j * np.sin(m * mapping.theta))
    return BasisTable(n_max, vals)


def moments(image, table: BasisTable) -> np.ndarray:
    """Complex moments A_nm = sum_p I_p * table[p, nm] in canonical order."""
    pix = np.asarray(image.pixel_phe if isinstance(image, CherenkovImage) else image, dtype=float)
    if pix.shape != (table.n_pixels,):
        raise InvalidArgument(f"image has shape {pix.shape}, table expects {table.n_pixels} pixels")
    return pix @ table.values


def feature_vector(moment_set: np.ndarray) -> np.ndarray:
    return np.abs(np.asarray(moment_set, dtype=complex))


def extract_features(image, table: BasisTable) -> np.ndarray:
    return feature_vector(moments(image, table))


def extract_many(images, table: BasisTable) -> np.ndarray:
    """Feature matrix for a stack of pixel vectors (rows are events)."""
    pix = np.asarray([im.pixel_phe if isinstance(im, CherenkovImage) else im for im in images],
                     dtype=float)
    if pix.size == 0:
        return np.zeros((0, table.n_pairs))
    if pix.shape[1] != table.n_pixels:
        raise InvalidArgument("pixel count mismatch between images and basis table")
    return np.abs(pix @ table.values)


def reconstruct(moment_set: np.ndarray, mapping: DiskMapping, n_max: int) -> np.ndarray:
    """Real image from m >= 0 moments, adding the conjugate m < 0 half implicitly."""
    pairs = nm_pairs(n_max)
    a = np.asarray(moment_set, dtype=complex)
    if a.shape != (len(pairs),):
        raise InvalidArgument(f"expected {len(pairs)} moments for n_max={n_max}")
    out = np.zeros(mapping.n_pixels)
    for k, (n, m) in enumerate(pairs):
        term = np.real(a[k] * basis_function(n, m, mapping.rho, mapping.theta))
        out += term if m == 0 else 2.0 * term
    return out


def orthogonality_check(n_max: int, grid: int = 512, chunk: int = 1 << 17) -> float:
    """Max |<V_nm, V_n'm'> - pi/(n+1) delta| over the full signed basis.

    Midpoint rule on a ``grid x grid`` Cartesian lattice over [-1, 1]^2,
    keeping cell centres with rho <= 1.
    """
    if grid < 256:
        raise InvalidArgument("grid must be >= 256 points per axis")
    h = 2.0 / grid
    c = -1.0 + h * (np.arange(grid) + 0.5)
    xx, yy = np.meshgrid(c, c)
    rr = np.hypot(xx, yy).ravel()
    inside = rr <= 1.0
    rho = rr[inside]
    theta = np.arctan2(yy.ravel()[inside], xx.ravel()[inside])
    pairs = signed_nm_pairs(n_max)
    gram = np.zeros((len(pairs), len(pairs)), dtype=complex)
    for s in range(0, len(rho), chunk):
        r, t = rho[s:s + chunk], theta[s:s + chunk]
        v = np.column_stack([basis_function(n, m, r, t) for n, m in pairs])
        gram += v.T @ v.conj()
    gram *= h * h
    expect = np.diag([math.pi / (n + 1) for n, _ in pairs])
    return float(np.max(np.abs(gram - expect)))


def pixel_area_polygon(geometry: CameraGeometry, mapping: DiskMapping) -> float:
    """Total mapped pixel area from the hexagon vertices (shoelace formula).

    Independent of the closed-form pixel weight; used to check it.
    """
    rc = geometry.pixel_circumradius * mapping.scale
    total = 0.0
    for p in range(geometry.n_pixels):
        v = hexagon_vertices(geometry.pixel_positions[p] * mapping.scale, rc)
        x, y = v[:, 0], v[:, 1]
        total += 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
    return total


# ---------------------------------------------------------------------------
# binary table file

def write_basis_table(path, table: BasisTable) -> None:
    with open(path, "wb") as fh:
        fh.write(BASIS_MAGIC)
        fh.write(struct.pack("<HHHI", 1, 0, table.n_max, table.n_pixels))
        inter = np.empty((table.n_pixels, table.n_pairs, 2), dtype="<f8")
        inter[..., 0] = table.re
        inter[..., 1] = table.im
        fh.write(inter.tobytes())


def read_basis_table(path) -> BasisTable:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != BASIS_MAGIC:
        raise DataFormatError("not a basis table file")
    version, q_flag, n_max, n_pix = struct.unpack_from("<HHHI", data, 4)
    if version != 1 or q_flag != 0:
        raise DataFormatError(f"unsupported basis table version={version} q_flag={q_flag}")
    n_pairs = n_features(n_max)
    raw = np.frombuffer(data, dtype="<f8", offset=14)
    if raw.size != n_pix * n_pairs * 2:
        raise DataFormatError("basis table payload size mismatch")
    raw = raw.reshape(n_pix, n_pairs, 2)
    vals = np.empty((n_pix, n_pairs), dtype=complex)
    vals.real = raw[..., 0]
    vals.imag = raw[..., 1]
    return BasisTable(n_max, vals)


# ---------------------------------------------------------------------------
# features CSV

def feature_names(n: int) -> list[str]:
    width = max(2, len(str(n - 1)))
    return [f"f{k:0{width}d}" for k in range(n)]


def write_features_csv(path, event_ids, labels, features) -> None:
    features = np.atleast_2d(np.asarray(features, dtype=float))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(["event_id", "label"] + feature_names(features.shape[1])) + "\n")
        for eid, lab, row in zip(event_ids, labels, features):
            vals = ",".join(f"{v:.17g}" for v in row)
            fh.write(f"{eid},{lab or ''},{vals}\n")


def read_features_csv(path):
    """Returns ``(event_ids, labels, X)``; empty labels become ``None``."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if header[:2] != ["event_id", "label"] or len(header) < 3:
            raise DataFormatError(f"{path}: not a features file")
        ids, labels, rows = [], [], []
        for lineno, line in enumerate(fh, 2):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split(",")
            if len(parts) != len(header):
                raise DataFormatError(f"{path}:{lineno}: expected {len(header)} columns")
            try:
                ids.append(int(parts[0]))
                rows.append([float(v) for v in parts[2:]])
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from exc
            if parts[1] not in ("", "gamma", "hadron"):
                raise DataFormatError(f"{path}:{lineno}: bad label {parts[1]!r}")
            labels.append(parts[1] or None)
    X = np.array(rows, dtype=float).reshape(len(rows), len(header) - 2)
    return ids, labels, X
