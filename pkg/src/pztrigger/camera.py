"""Hexagonal camera geometry, synthetic events, tail-cut cleaning and Hillas parameters.

Pixels live on a hexagonal lattice.  Every pixel carries integer lattice
coordinates ``(a, b)`` with position ``a * e0 + b * e60`` where ``e0 = (1, 0)``
and ``e60 = (1/2, sqrt(3)/2)`` (times the pitch).  Ordering is: centre pixel
first, then ring by ring, each ring starting on the +x axis and walking
counter-clockwise.  A 60 degree rotation therefore maps index ``i`` of ring
``k`` to index ``(i + k) mod 6k`` of the same ring, which gives an exact
permutation without any floating point matching.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional

import numpy as np

from .errors import DataFormatError, EmptyImageError, InvalidArgument
from .rng import SplitMix64

GAMMA = "gamma"
HADRON = "hadron"
LABELS = (GAMMA, HADRON)

SQRT3 = math.sqrt(3.0)

# lattice steps towards the six neighbours, counter-clockwise from +x
_HEX_DIRS = ((1, 0), (0, 1), (-1, 1), (-1, 0), (0, -1), (1, -1))


@dataclass(frozen=True)
class CameraGeometry:
    rings: int
    pixel_pitch: float
    lattice: np.ndarray  # (n, 2) int
    pixel_positions: np.ndarray  # (n, 2) float
    neighbors: tuple  # tuple of tuples of pixel indices

    @property
    def n_pixels(self) -> int:
        return len(self.pixel_positions)

    @property
    def pixel_area(self) -> float:
        return 0.5 * SQRT3 * self.pixel_pitch**2

    @property
    def pixel_circumradius(self) -> float:
        return self.pixel_pitch / SQRT3

    def radius_sq_units(self) -> np.ndarray:
        """``a^2 + ab + b^2`` per pixel: squared centre distance in pitch units, exact."""
        a, b = self.lattice[:, 0], self.lattice[:, 1]
        return a * a + a * b + b * b


def _ring_lattice(k: int) -> list[tuple[int, int]]:
    if k == 0:
        return [(0, 0)]
    out = []
    # corner j sits at k * dir[j]; side j walks towards corner j+1
    for j in range(6):
        ca, cb = _HEX_DIRS[j]
        na, nb = _HEX_DIRS[(j + 1) % 6]
        for t in range(k):
            out.append((k * ca + t * (na - ca), k * cb + t * (nb - cb)))
    return out


def build_geometry(rings: int, pixel_pitch: float = 1.0) -> CameraGeometry:
    """Build a hexagonal camera with ``3 * rings * (rings + 1) + 1`` pixels."""
    if int(rings) != rings or rings < 1:
        raise InvalidArgument(f"rings must be a positive integer, got {rings!r}")
    if not pixel_pitch > 0:
        raise InvalidArgument(f"pixel_pitch must be positive, got {pixel_pitch!r}")
    rings = int(rings)
    coords = []
    for k in range(rings + 1):
        coords.extend(_ring_lattice(k))
    lattice = np.array(coords, dtype=np.int64)
    a = lattice[:, 0].astype(float)
    b = lattice[:, 1].astype(float)
    pos = np.column_stack([(a + 0.5 * b) * pixel_pitch, (0.5 * SQRT3 * b) * pixel_pitch])

    index = {c: i for i, c in enumerate(coords)}
    neighbors = []
    for ca, cb in coords:
        nb = tuple(
            index[(ca + da, cb + db)] for da, db in _HEX_DIRS if (ca + da, cb + db) in index
        )
        neighbors.append(nb)
    return CameraGeometry(rings, float(pixel_pitch), lattice, pos, tuple(neighbors))


def rotation_permutation(geometry: CameraGeometry, steps: int = 1) -> np.ndarray:
    """Index map ``perm`` with pixel ``i`` rotated by ``steps * 60`` degrees landing on ``perm[i]``."""
    perm = np.empty(geometry.n_pixels, dtype=np.int64)
    perm[0] = 0
    start = 1
    for k in range(1, geometry.rings + 1):
        size = 6 * k
        idx = np.arange(size)
        perm[start + idx] = start + (idx + steps * k) % size
        start += size
    return perm


def rotate_image(pixels: np.ndarray, geometry: CameraGeometry, steps: int = 1) -> np.ndarray:
    perm = rotation_permutation(geometry, steps)
    out = np.empty_like(pixels)
    out[perm] = pixels
    return out


@dataclass(frozen=True)
class DiskMapping:
    scale: float
    rho: np.ndarray
    theta: np.ndarray
    pixel_weight: np.ndarray

    @property
    def pixel_rho_theta(self) -> np.ndarray:
        return np.column_stack([self.rho, self.theta])

    @property
    def n_pixels(self) -> int:
        return len(self.rho)


def map_to_unit_disk(geometry: CameraGeometry) -> DiskMapping:
    """Scale the camera so the outer corner of the farthest pixel touches rho = 1.

    Radii are computed from the integer lattice norm so that pixels related
    by a lattice rotation get bitwise identical rho.
    """
    p = geometry.pixel_pitch
    r_units = np.sqrt(geometry.radius_sq_units().astype(float))
    reach = max(
        float(np.hypot(v[:, 0], v[:, 1]).max())
        for v in (hexagon_vertices(c, geometry.pixel_circumradius)
                  for c in geometry.pixel_positions)
    )
    scale = 1.0 / reach
    rho = r_units * (p * scale)
    x, y = geometry.pixel_positions[:, 0], geometry.pixel_positions[:, 1]
    theta = np.mod(np.arctan2(y, x), 2.0 * np.pi)
    theta[rho == 0.0] = 0.0
    weight = np.full(geometry.n_pixels, geometry.pixel_area * scale * scale)
    return DiskMapping(float(scale), rho, theta, weight)


def hexagon_vertices(center, circumradius: float) -> np.ndarray:
    """Vertices of a pixel hexagon; flat sides face the six lattice neighbours."""
    ang = np.deg2rad(30.0 + 60.0 * np.arange(6))
    return np.column_stack(
        [center[0] + circumradius * np.cos(ang), center[1] + circumradius * np.sin(ang)]
    )


# ---------------------------------------------------------------------------
# events


@dataclass
class CherenkovImage:
    pixel_phe: np.ndarray
    label: Optional[str] = None
    event_id: int = 0
    seed: Optional[int] = None

    def with_pixels(self, pixels: np.ndarray) -> "CherenkovImage":
        return CherenkovImage(pixels, self.label, self.event_id, self.seed)


@dataclass(frozen=True)
class GeneratorParams:
    """Shape distributions for the synthetic shower generator (camera length units).

    Gammas are one elliptical Gaussian whose major axis points at the camera
    centre (up to ``gamma_alpha_sigma_deg`` of jitter).  Hadrons are 1 to
    ``hadron_max_blobs`` randomly oriented, broader blobs.
    """

    gamma_size: tuple = (200.0, 1000.0)
    gamma_length: tuple = (1.0, 2.0)
    gamma_width: tuple = (0.45, 0.7)
    gamma_dist: tuple = (2.5, 5.0)
    gamma_alpha_sigma_deg: float = 4.0
    hadron_size: tuple = (80.0, 5000.0)
    hadron_length: tuple = (1.0, 3.5)
    hadron_width: tuple = (0.6, 2.0)
    hadron_max_blobs: int = 4
    hadron_radius: float = 7.0
    pedestal_mean: float = 0.0
    pedestal_sigma: float = 1.0

    def __post_init__(self):
        for name in ("gamma_size", "gamma_length", "gamma_width", "hadron_size",
                     "hadron_length", "hadron_width"):
            lo, hi = getattr(self, name)
            if not (0 < lo <= hi):
                raise InvalidArgument(f"{name} must satisfy 0 < lo <= hi, got {(lo, hi)}")
        lo, hi = self.gamma_dist
        if not 0 <= lo <= hi:
            raise InvalidArgument(f"gamma_dist must satisfy 0 <= lo <= hi, got {(lo, hi)}")
        if self.hadron_max_blobs < 1:
            raise InvalidArgument("hadron_max_blobs must be >= 1")
        if self.pedestal_sigma < 0 or self.gamma_alpha_sigma_deg < 0 or self.hadron_radius < 0:
            raise InvalidArgument("spreads must be non-negative")

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorParams":
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**kw)


def _render_blob(out, positions, area, size, cx, cy, length, width, psi):
    dx = positions[:, 0] - cx
    dy = positions[:, 1] - cy
    c, s = math.cos(psi), math.sin(psi)
    lon = dx * c + dy * s
    lat = -dx * s + dy * c
    norm = size * area / (2.0 * math.pi * length * width)
    out += norm * np.exp(-0.5 * ((lon / length) ** 2 + (lat / width) ** 2))


def generate_event(
    label: str, params: GeneratorParams, seed: int, geometry: CameraGeometry, event_id: int = 0
) -> CherenkovImage:
    """Draw one synthetic event.

    Random draws happen in a fixed order (documented per class below), followed
    by one normal draw per pixel in pixel order when ``pedestal_sigma > 0``.

    gamma: size (log-uniform), length, width, dist, azimuth, axis jitter.
    hadron: blob count, then per blob: size weight, radius, azimuth,
    orientation, length, width.
    """
    if label not in LABELS:
        raise InvalidArgument(f"label must be one of {LABELS}, got {label!r}")
    rng = SplitMix64(seed)
    pos = geometry.pixel_positions
    area = geometry.pixel_area
    img = np.zeros(geometry.n_pixels)

    if label == GAMMA:
        size = rng.log_uniform(*params.gamma_size)
        length = rng.uniform(*params.gamma_length)
        width = rng.uniform(*params.gamma_width)
        if width > length:
            length, width = width, length
        dist = rng.uniform(*params.gamma_dist)
        phi = rng.uniform(0.0, 2.0 * math.pi)
        jitter = math.radians(rng.normal(0.0, params.gamma_alpha_sigma_deg))
        _render_blob(img, pos, area, size, dist * math.cos(phi), dist * math.sin(phi),
                     length, width, phi + jitter)
    else:
        n_blobs = rng.randint(1, params.hadron_max_blobs)
        total = rng.log_uniform(*params.hadron_size)
        blobs = []
        for _ in range(n_blobs):
            w = rng.uniform(0.2, 1.0)
            r = params.hadron_radius * math.sqrt(rng.uniform())
            phi = rng.uniform(0.0, 2.0 * math.pi)
            psi = rng.uniform(0.0, math.pi)
            length = rng.uniform(*params.hadron_length)
            width = rng.uniform(*params.hadron_width)
            if width > length:
                length, width = width, length
            blobs.append((w, r * math.cos(phi), r * math.sin(phi), length, width, psi))
        wsum = sum(b[0] for b in blobs)
        for w, cx, cy, length, width, psi in blobs:
            _render_blob(img, pos, area, total * w / wsum, cx, cy, length, width, psi)

    if params.pedestal_sigma > 0:
        noise = np.array([rng.normal() for _ in range(geometry.n_pixels)])
        img += params.pedestal_mean + params.pedestal_sigma * noise
    elif params.pedestal_mean != 0:
        img += params.pedestal_mean
    return CherenkovImage(img, label, event_id, seed)


def event_seeds(seed: int, count: int) -> list[int]:
    """Per-event seeds drawn from a master SplitMix64 stream."""
    rng = SplitMix64(seed)
    return [rng.next_u64() for _ in range(count)]


def generate_dataset(
    n_gamma: int, n_hadron: int, params: GeneratorParams, seed: int, geometry: CameraGeometry
) -> list[CherenkovImage]:
    """Gammas first, then hadrons; event ids are consecutive from 0."""
    seeds = event_seeds(seed, n_gamma + n_hadron)
    labels = [GAMMA] * n_gamma + [HADRON] * n_hadron
    return [generate_event(lab, params, s, geometry, event_id=i)
            for i, (lab, s) in enumerate(zip(labels, seeds))]


# ---------------------------------------------------------------------------
# cleaning and Hillas


def clean_image(
    image: CherenkovImage, geometry: CameraGeometry, core_thr: float = 10.0,
    boundary_thr: float = 5.0,
) -> CherenkovImage:
    """Two-level tail cut: core pixels plus boundary pixels touching a core pixel."""
    if not core_thr >= boundary_thr >= 0:
        raise InvalidArgument(
            f"need core_thr >= boundary_thr >= 0, got ({core_thr}, {boundary_thr})")
    pix = np.asarray(image.pixel_phe, dtype=float)
    if len(pix) != geometry.n_pixels:
        raise InvalidArgument(f"image has {len(pix)} pixels, geometry {geometry.n_pixels}")
    core = pix >= core_thr
    keep = core.copy()
    for i in np.flatnonzero((pix >= boundary_thr) & ~core):
        if any(core[j] for j in geometry.neighbors[i]):
            keep[i] = True
    out = np.where(keep, np.maximum(pix, 0.0), 0.0)
    return image.with_pixels(out)


@dataclass(frozen=True)
class HillasParams:
    size: float
    cog: tuple
    length: float
    width: float
    dist: float
    alpha: float
    psi: float = field(default=0.0)  # major-axis angle, radians in (-pi/2, pi/2]

    def as_dict(self) -> dict:
        return {"size": self.size, "cog_x": self.cog[0], "cog_y": self.cog[1],
                "length": self.length, "width": self.width, "dist": self.dist,
                "alpha": self.alpha, "psi": self.psi}


def hillas(image: CherenkovImage, geometry: CameraGeometry) -> HillasParams:
    """Second-moment shower parameters.

    ``alpha`` is the angle between the major axis and the centre-to-cog
    direction, folded into [0, 90] degrees (0 when the cog sits on the centre).
    """
    w = np.asarray(image.pixel_phe, dtype=float)
    size = float(w.sum())
    if not np.any(w != 0) or size <= 0:
        raise EmptyImageError("Hillas parameters need at least one positive pixel")
    x, y = geometry.pixel_positions[:, 0], geometry.pixel_positions[:, 1]
    mx = float(np.dot(w, x) / size)
    my = float(np.dot(w, y) / size)
    dx, dy = x - mx, y - my
    sxx = float(np.dot(w, dx * dx) / size)
    syy = float(np.dot(w, dy * dy) / size)
    sxy = float(np.dot(w, dx * dy) / size)

    half_tr = 0.5 * (sxx + syy)
    disc = math.hypot(0.5 * (sxx - syy), sxy)
    length = math.sqrt(max(half_tr + disc, 0.0))
    width = math.sqrt(max(half_tr - disc, 0.0))
    psi = 0.5 * math.atan2(2.0 * sxy, sxx - syy)

    dist = math.hypot(mx, my)
    if dist == 0.0:
        alpha = 0.0
    else:
        diff = abs(psi - math.atan2(my, mx)) % math.pi
        alpha = math.degrees(min(diff, math.pi - diff))
    return HillasParams(size, (mx, my), length, width, dist, alpha, psi)


# ---------------------------------------------------------------------------
# files


def geometry_to_json(geometry: CameraGeometry) -> str:
    doc = {
        "version": 1,
        "rings": geometry.rings,
        "pixel_pitch": geometry.pixel_pitch,
        "pixels": [{"id": i, "x": float(x), "y": float(y)}
                   for i, (x, y) in enumerate(geometry.pixel_positions)],
        "neighbors": [list(nb) for nb in geometry.neighbors],
    }
    return json.dumps(doc)


def geometry_from_json(text: str) -> CameraGeometry:
    try:
        doc = json.loads(text)
        if doc.get("version") != 1:
            raise DataFormatError(f"unsupported geometry version {doc.get('version')!r}")
        geom = build_geometry(int(doc["rings"]), float(doc["pixel_pitch"]))
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"bad geometry file: {exc}") from exc
    if len(doc.get("pixels", [])) != geom.n_pixels:
        raise DataFormatError("geometry pixel list does not match ring count")
    return geom


def event_to_json(event: CherenkovImage) -> str:
    return json.dumps({
        "event_id": event.event_id,
        "label": event.label,
        "seed": event.seed,
        "pixels": [float(v) for v in event.pixel_phe],
    })


def write_events(path, events: Iterable[CherenkovImage]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ev in events:
            fh.write(event_to_json(ev))
            fh.write("\n")


def iter_events(path) -> Iterator[CherenkovImage]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                label = d.get("label")
                if label not in (None, GAMMA, HADRON):
                    raise DataFormatError(f"line {lineno}: bad label {label!r}")
                yield CherenkovImage(np.asarray(d["pixels"], dtype=float), label,
                                     d["event_id"], d.get("seed"))
            except (KeyError, TypeError, json.JSONDecodeError) as exc:
                raise DataFormatError(f"line {lineno}: {exc}") from exc


def read_events(path) -> list[CherenkovImage]:
    return list(iter_events(path))
