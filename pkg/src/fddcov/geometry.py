"""Array geometry, element radiation patterns and dual-polarized steering vectors.

Coordinate conventions used throughout the package:

* A propagation direction is an (azimuth, zenith) pair with azimuth in
  [-pi, pi] and zenith in [0, pi].  The unit propagation vector is
  u = (sin z * cos a, sin z * sin a, cos z), so zenith pi/2 is the horizon.
* The planar array lies in the y-z plane with boresight along +x.  The
  vertical element index advances along +z, the horizontal index along +y.
* Antenna element x(u, v, k), with u the vertical position (1..N_V), v the
  horizontal position (1..N_H) and k the slant index, maps to the flat
  vector index (k-1)*N_V*N_H + (u-1)*N_H + (v-1) (zero based).  Slant
  index 1 is +45 deg, index 2 is -45 deg; slanted pairs are co-located.
* Steering phases are referenced to the centroid of the element positions,
  which keeps the phase dynamic range minimal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class Direction:
    """A single propagation direction; values outside the domain are rejected."""

    azimuth: float
    zenith: float

    def __post_init__(self):
        if not (-math.pi <= self.azimuth <= math.pi):
            raise ValueError(f"azimuth {self.azimuth} outside [-pi, pi]")
        if not (0.0 <= self.zenith <= math.pi):
            raise ValueError(f"zenith {self.zenith} outside [0, pi]")


@dataclass(eq=False)
class AngularGrid:
    """Quadrature discretization of the angular domain [-pi, pi] x [0, pi].

    ``azimuth[q], zenith[q]`` are the node coordinates and ``weights[q]`` the
    quadrature weight of node q.  For the default Lebesgue product measure
    the weights sum to 2*pi**2 (the area of the domain).
    """

    azimuth: np.ndarray
    zenith: np.ndarray
    weights: np.ndarray
    n_azimuth: int
    n_zenith: int
    measure: str = "lebesgue"

    @property
    def size(self) -> int:
        return self.azimuth.size

    def node(self, q: int) -> Direction:
        return Direction(float(self.azimuth[q]), float(self.zenith[q]))


def make_grid(n_azimuth: int = 120, n_zenith: int = 60, solid_angle: bool = False) -> AngularGrid:
    """Uniform midpoint grid on [-pi, pi] x [0, pi] with product weights.

    ``solid_angle=True`` multiplies the weights by sin(zenith), giving the
    solid-angle measure instead of the plain product measure; the plain
    measure is the default used everywhere in this package.
    """
    if n_azimuth < 1 or n_zenith < 1:
        raise ValueError("grid dimensions must be positive")
    da = 2.0 * math.pi / n_azimuth
    dz = math.pi / n_zenith
    az = -math.pi + da * (np.arange(n_azimuth) + 0.5)
    zen = dz * (np.arange(n_zenith) + 0.5)
    # node q = a * n_zenith + z (azimuth-major ordering)
    azimuth = np.repeat(az, n_zenith)
    zenith = np.tile(zen, n_azimuth)
    weights = np.full(azimuth.size, da * dz)
    measure = "lebesgue"
    if solid_angle:
        weights = weights * np.sin(zenith)
        measure = "solid_angle"
    grid = AngularGrid(azimuth, zenith, weights, n_azimuth, n_zenith, measure)
    _validate_grid(grid)
    return grid


def _validate_grid(grid: AngularGrid):
    if np.any(grid.weights <= 0):
        raise ValueError("all quadrature weights must be positive")
    if grid.measure == "lebesgue":
        area = 2.0 * math.pi ** 2
        if abs(float(np.sum(grid.weights)) - area) > 1e-9 * area:
            raise ValueError("weights do not sum to the domain area 2*pi^2")


def grids_equal(a: AngularGrid, b: AngularGrid) -> bool:
    if a is b:
        return True
    return (
        a.measure == b.measure
        and np.array_equal(a.azimuth, b.azimuth)
        and np.array_equal(a.zenith, b.zenith)
        and np.array_equal(a.weights, b.weights)
    )


@dataclass(frozen=True)
class ElementPattern:
    """Parabolic-in-dB element power pattern with horizontal/vertical cuts.

    The attenuation of each cut is 3*(offset/beamwidth)^2 dB, clamped at the
    corresponding floor, so the power pattern is 3 dB down at exactly one
    beamwidth off boresight in that cut.  The combined attenuation is
    clamped at the front-back floor.
    """

    gain_dbi: float = 8.0
    bw_vertical_deg: float = 65.0
    bw_horizontal_deg: float = 65.0
    sidelobe_floor_db: float = 30.0
    front_back_floor_db: float = 30.0

    @classmethod
    def isotropic(cls) -> "ElementPattern":
        return cls(gain_dbi=0.0, bw_vertical_deg=math.inf, bw_horizontal_deg=math.inf)

    def power_db(self, azimuth, zenith):
        """Element power pattern in dB at (azimuth, zenith); array friendly."""
        az_deg = np.degrees(np.asarray(azimuth, dtype=float))
        zen_deg = np.degrees(np.asarray(zenith, dtype=float))
        att_h = np.minimum(3.0 * (az_deg / self.bw_horizontal_deg) ** 2, self.front_back_floor_db)
        att_v = np.minimum(
            3.0 * ((zen_deg - 90.0) / self.bw_vertical_deg) ** 2, self.sidelobe_floor_db
        )
        att = np.minimum(att_h + att_v, self.front_back_floor_db)
        return self.gain_dbi - att


@dataclass(frozen=True)
class UpaGeometry:
    """Cross-polarized uniform planar array in the y-z plane.

    ``slants`` holds one slant angle per co-located antenna; the default is
    the +-45 deg cross-polarized pair, giving N = 2 * N_V * N_H antennas.
    """

    n_vertical: int
    n_horizontal: int
    spacing: float
    slants: tuple = (math.pi / 4, -math.pi / 4)
    element_pattern: ElementPattern = field(default_factory=ElementPattern)

    def __post_init__(self):
        if self.n_vertical < 1 or self.n_horizontal < 1:
            raise ValueError("array dimensions must be positive")
        if self.spacing <= 0:
            raise ValueError("element spacing must be positive")
        if len(self.slants) < 1:
            raise ValueError("at least one polarization slant is required")

    @property
    def n_positions(self) -> int:
        return self.n_vertical * self.n_horizontal

    @property
    def n_antennas(self) -> int:
        return len(self.slants) * self.n_positions


@dataclass(frozen=True)
class UePatternConfig:
    """Orientation (Euler angles) of a vertically polarized terminal antenna."""

    rotation: tuple = (0.0, 0.0, 0.0)
    base_pattern: str = "isotropic"

    def __post_init__(self):
        if self.base_pattern != "isotropic":
            raise ValueError(f"unknown base pattern {self.base_pattern!r}")


@dataclass
class SteeringResponse:
    """Dual-polarized array response at one direction."""

    a_vertical: np.ndarray
    a_horizontal: np.ndarray


def element_positions(geom: UpaGeometry) -> np.ndarray:
    """(N_V*N_H, 3) element positions in meters; slanted pairs share a point."""
    u = np.arange(geom.n_vertical)
    v = np.arange(geom.n_horizontal)
    pos = np.zeros((geom.n_positions, 3))
    pos[:, 1] = np.tile(v, geom.n_vertical) * geom.spacing  # horizontal along +y
    pos[:, 2] = np.repeat(u, geom.n_horizontal) * geom.spacing  # vertical along +z
    return pos


def propagation_vector(azimuth, zenith) -> np.ndarray:
    """Unit propagation vector(s), shape (3,) or (3, n)."""
    az = np.asarray(azimuth, dtype=float)
    zen = np.asarray(zenith, dtype=float)
    sz = np.sin(zen)
    return np.stack([sz * np.cos(az), sz * np.sin(az), np.cos(zen)])


def bs_element_field(direction: Direction, slant: float, pattern: ElementPattern):
    """Field components (f_V, f_H) of one slanted element.

    The slant splits the field between the vertical and horizontal
    polarization as cos/sin of the slant angle, so |f_V|^2 + |f_H|^2 equals
    the element power pattern regardless of the slant.
    """
    amp = 10.0 ** (pattern.power_db(direction.azimuth, direction.zenith) / 20.0)
    return amp * math.cos(slant), amp * math.sin(slant)


def _element_field_grid(pattern: ElementPattern, slants, azimuth, zenith):
    """Per-slant field components on a batch of directions: (n_slants, n) pair."""
    amp = 10.0 ** (pattern.power_db(azimuth, zenith) / 20.0)
    cos_s = np.cos(np.asarray(slants, dtype=float))[:, None]
    sin_s = np.sin(np.asarray(slants, dtype=float))[:, None]
    return amp[None, :] * cos_s, amp[None, :] * sin_s


def steering_phases(geom: UpaGeometry, carrier_hz: float, azimuth, zenith) -> np.ndarray:
    """Centroid-referenced per-position phase factors, shape (N_V*N_H, n).

    Exploits the lattice separability of the planar array: the phase of
    position (u, v) is u' * k*d*u_z + v' * k*d*u_y with centroid-referenced
    integer offsets, so only two base phasor rows per axis are exponentiated
    and the rest follow by cumulative products.
    """
    az = np.atleast_1d(np.asarray(azimuth, dtype=float))
    zen = np.atleast_1d(np.asarray(zenith, dtype=float))
    k_d = 2.0 * math.pi * carrier_hz / SPEED_OF_LIGHT * geom.spacing
    sz = np.sin(zen)
    base_y = k_d * sz * np.sin(az)  # horizontal index advances along +y
    base_z = k_d * np.cos(zen)  # vertical index advances along +z

    def axis_rows(base, count):
        rows = np.empty((count, base.size), dtype=complex)
        rows[0] = np.exp(1j * (-(count - 1) / 2.0) * base)
        if count > 1:
            step = np.exp(1j * base)
            for i in range(1, count):
                rows[i] = rows[i - 1] * step
        return rows

    z_rows = axis_rows(base_z, geom.n_vertical)
    y_rows = axis_rows(base_y, geom.n_horizontal)
    return (z_rows[:, None, :] * y_rows[None, :, :]).reshape(geom.n_positions, az.size)


def array_response_grid(geom: UpaGeometry, carrier_hz: float, azimuth, zenith):
    """Dual-polarized steering matrices (A_V, A_H), each (N, n) complex."""
    if carrier_hz <= 0:
        raise ValueError("carrier frequency must be positive")
    azimuth = np.atleast_1d(np.asarray(azimuth, dtype=float))
    zenith = np.atleast_1d(np.asarray(zenith, dtype=float))
    phases = steering_phases(geom, carrier_hz, azimuth, zenith)
    f_v, f_h = _element_field_grid(geom.element_pattern, geom.slants, azimuth, zenith)
    blocks_v = [f_v[s][None, :] * phases for s in range(len(geom.slants))]
    blocks_h = [f_h[s][None, :] * phases for s in range(len(geom.slants))]
    return np.concatenate(blocks_v, axis=0), np.concatenate(blocks_h, axis=0)


def array_response(geom: UpaGeometry, carrier_hz: float, direction: Direction) -> SteeringResponse:
    """Array response at a single direction (see array_response_grid for batches)."""
    a_v, a_h = array_response_grid(geom, carrier_hz, direction.azimuth, direction.zenith)
    return SteeringResponse(a_v[:, 0], a_h[:, 0])


def _polarization_rotation_angle(rotation, azimuth, zenith):
    """Angle by which a rotated antenna's field components mix into the
    global (vertical, horizontal) polarization basis at each direction."""
    alpha, beta, gamma = rotation
    rel = azimuth - alpha
    a = np.sin(gamma) * np.cos(zenith) * np.sin(rel) + np.cos(gamma) * (
        np.cos(beta) * np.sin(zenith) - np.sin(beta) * np.cos(zenith) * np.cos(rel)
    )
    b = np.sin(gamma) * np.cos(rel) + np.sin(beta) * np.cos(gamma) * np.sin(rel)
    return np.arctan2(b, a)


def ue_response_grid(cfg: UePatternConfig, azimuth, zenith):
    """Rotated terminal pattern components (b_V, b_H) on a batch of directions."""
    azimuth = np.asarray(azimuth, dtype=float)
    zenith = np.asarray(zenith, dtype=float)
    psi = _polarization_rotation_angle(cfg.rotation, azimuth, zenith)
    # isotropic base pattern: unit vertical field before rotation
    return np.cos(psi), np.sin(psi)


def ue_response(cfg: UePatternConfig, direction: Direction):
    b_v, b_h = ue_response_grid(
        cfg, np.atleast_1d(direction.azimuth), np.atleast_1d(direction.zenith)
    )
    return float(b_v[0]), float(b_h[0])
