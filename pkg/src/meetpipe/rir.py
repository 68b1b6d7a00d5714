"""Shoebox room impulse responses via the image source method.

Each mirror image of the source contributes a band-limited impulse at its
propagation delay, scaled by spherical spreading 1 / (4 pi d) and by one
factor of (1 - absorption) per wall bounce.  Fractional delays are realised
with an 81 tap Hann-windowed sinc kernel, so the tap nearest the true delay
carries the peak.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError, ShapeError

SINC_HALF_WIDTH = 40  # taps on each side of the nominal delay


@dataclass
class RoomSpec:
    """Axis-aligned room with uniform wall absorption.

    Arguments:
        dimensions: (Lx, Ly, Lz) in metres
        absorption: energy fraction removed per bounce, in (0, 1]
        max_reflection_order: total bounce budget per image
        speed_of_sound: metres per second
    """

    dimensions: tuple[float, float, float]
    absorption: float = 0.5
    max_reflection_order: int = 3
    speed_of_sound: float = 343.0

    def __post_init__(self):
        dims = tuple(float(d) for d in self.dimensions)
        if len(dims) != 3 or any(d <= 0 for d in dims):
            raise GeometryError(f"room dimensions must be three positive values, got {dims}")
        if not 0.0 < self.absorption <= 1.0:
            raise GeometryError(f"absorption must lie in (0, 1], got {self.absorption}")
        if self.max_reflection_order < 0:
            raise GeometryError(f"reflection order must be >= 0, got {self.max_reflection_order}")
        if self.speed_of_sound <= 0:
            raise GeometryError(f"speed of sound must be positive, got {self.speed_of_sound}")
        self.dimensions = dims

    def contains(self, point: np.ndarray) -> bool:
        p = np.asarray(point, dtype=np.float64)
        return bool(np.all(p > 0) and np.all(p < np.asarray(self.dimensions)))


@dataclass
class ArrayGeometry:
    """Microphone positions, M x 3 metres."""

    mic_positions: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.mic_positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] < 1:
            raise GeometryError(f"expected M x 3 positions, got shape {pos.shape}")
        for i in range(pos.shape[0]):
            for j in range(i + 1, pos.shape[0]):
                if np.allclose(pos[i], pos[j]):
                    raise GeometryError(f"microphones {i} and {j} coincide")
        self.mic_positions = pos

    @property
    def num_mics(self) -> int:
        return self.mic_positions.shape[0]

    @classmethod
    def circular(
        cls,
        center: tuple[float, float, float],
        radius: float = 0.0425,
        num_ring: int = 6,
        include_center: bool = True,
    ) -> "ArrayGeometry":
        """Planar ring of microphones, optionally with one at the centre."""
        if radius <= 0 or num_ring < 1:
            raise GeometryError("ring needs a positive radius and at least one mic")
        cx, cy, cz = center
        angles = 2.0 * np.pi * np.arange(num_ring) / num_ring
        ring = np.stack(
            [cx + radius * np.cos(angles), cy + radius * np.sin(angles), np.full(num_ring, cz)],
            axis=1,
        )
        if include_center:
            ring = np.vstack([[center], ring])
        return cls(ring)


def _axis_images(source: float, length: float, max_count: int):
    """Mirror coordinates along one axis with their bounce counts."""
    coords, counts = [], []
    for l in range(-(max_count // 2 + 1), max_count // 2 + 2):
        for flip in (0, 1):
            count = abs(2 * l) if flip == 0 else abs(2 * l - 1)
            if count > max_count:
                continue
            coord = (source if flip == 0 else -source) + 2.0 * l * length
            coords.append(coord)
            counts.append(count)
    return np.asarray(coords), np.asarray(counts)


def compute_rir(
    room: RoomSpec,
    source: np.ndarray,
    mics: ArrayGeometry,
    sample_rate: int = 16000,
) -> np.ndarray:
    """Room impulse responses from one source to every microphone.

    Arguments:
        source: (3,) position in metres, strictly inside the room
        sample_rate: output rate of the impulse responses

    Returns:
        M x L float64 array, one response per microphone
    """
    source = np.asarray(source, dtype=np.float64)
    if source.shape != (3,):
        raise ShapeError(f"source must be a 3-vector, got shape {source.shape}")
    if not room.contains(source):
        raise GeometryError(f"source {source.tolist()} lies outside the room")
    for m in range(mics.num_mics):
        if not room.contains(mics.mic_positions[m]):
            raise GeometryError(f"microphone {m} lies outside the room")

    order = room.max_reflection_order
    ax = [_axis_images(source[d], room.dimensions[d], order) for d in range(3)]
    # cartesian product of per-axis images, pruned to the total bounce budget
    counts = (
        ax[0][1][:, None, None] + ax[1][1][None, :, None] + ax[2][1][None, None, :]
    )
    keep = counts <= order
    gx, gy, gz = np.meshgrid(ax[0][0], ax[1][0], ax[2][0], indexing="ij")
    images = np.stack([gx[keep], gy[keep], gz[keep]], axis=1)
    bounces = counts[keep]
    gains = (1.0 - room.absorption) ** bounces

    dists = np.linalg.norm(
        images[None, :, :] - mics.mic_positions[:, None, :], axis=2
    )  # M x I
    amps = gains[None, :] / (4.0 * np.pi * dists)
    delays = dists * sample_rate / room.speed_of_sound

    length = int(np.ceil(delays.max())) + SINC_HALF_WIDTH + 2
    rir = np.zeros((mics.num_mics, length))
    offsets = np.arange(-SINC_HALF_WIDTH, SINC_HALF_WIDTH + 1)
    for m in range(mics.num_mics):
        centers = np.round(delays[m]).astype(int)  # I
        taps = centers[:, None] + offsets[None, :]  # I x 81
        t = taps - delays[m][:, None]
        window = 0.5 * (1.0 + np.cos(np.pi * t / (SINC_HALF_WIDTH + 0.5)))
        kernel = amps[m][:, None] * np.sinc(t) * window
        valid = (taps >= 0) & (taps < length)
        np.add.at(rir[m], taps[valid], kernel[valid])
    return rir
