"""Uniform planar array geometry and steering-vector kernels.

Two kernels share one element layout: a planar-wavefront (far-field)
response that depends on the arrival angles only, and a spherical-wavefront
(near-field) response that also depends on the scatter distance.  Both are
normalized to unit Euclidean norm and both expose analytic partial
derivatives with respect to the continuous parameters.

Conventions
-----------
Elements sit on a rectangular grid in the y-z plane: element (n1, n2) at
(0, n1*d, n2*d), n1 in {0..N1-1}, n2 in {0..N2-1}, element (0, 0) at the
origin.  A vector entry for (n1, n2) lives at flat index n2*N1 + n1 (the
z-axis factor is the outer Kronecker factor).  With this layout the two
kernels agree entrywise in the large-distance limit, so a path can switch
kernel without reindexing.

Labels follow the hidden-variable convention used by the fitting code:
0 marks a near-field path, 1 a far-field path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NEAR = 0
FAR = 1

_LABELS = (NEAR, FAR)


@dataclass(frozen=True)
class ArrayGeometry:
    """Uniform planar array: element counts, spacing d and wavelength (meters)."""

    n1: int
    n2: int
    d: float
    wavelength: float

    def __post_init__(self):
        if self.n1 < 1 or self.n2 < 1:
            raise ValueError(f"element counts must be >= 1, got {self.n1} x {self.n2}")
        if self.d <= 0:
            raise ValueError(f"element spacing must be positive, got {self.d}")
        if self.wavelength <= 0:
            raise ValueError(f"wavelength must be positive, got {self.wavelength}")

    @property
    def n_elements(self) -> int:
        return self.n1 * self.n2

    @property
    def wavenumber(self) -> float:
        return 2.0 * np.pi / self.wavelength


def _check_angles(theta: float, phi: float):
    if not 0.0 < theta < np.pi:
        raise ValueError(f"theta must lie in (0, pi), got {theta}")
    # the azimuth endpoints are admitted: the response degenerates gracefully there
    if not -np.pi / 2 <= phi <= np.pi / 2:
        raise ValueError(f"phi must lie in [-pi/2, pi/2], got {phi}")


def _check_distance(r: float):
    if not r > 0.0:
        raise ValueError(f"scatter distance must be positive, got {r}")


def rayleigh_distance(geom: ArrayGeometry) -> float:
    "Near/far boundary 2*(N1^2 + N2^2)*d^2 / wavelength."
    return 2.0 * (geom.n1**2 + geom.n2**2) * geom.d**2 / geom.wavelength


def _far_phase_terms(geom: ArrayGeometry, theta: float, phi: float):
    # (N2, N1) grid of n2*d*cos(theta) + n1*d*sin(phi)*sin(theta)
    n1 = np.arange(geom.n1)
    n2 = np.arange(geom.n2)
    return np.add.outer(n2 * geom.d * np.cos(theta),
                        n1 * geom.d * np.sin(phi) * np.sin(theta))


def far_field_steering(geom: ArrayGeometry, theta: float, phi: float) -> np.ndarray:
    """Planar-wavefront array response, unit norm, length N1*N2.

    Entry (n1, n2) is exp(+j*k*(n2*d*cos(theta) + n1*d*sin(phi)*sin(theta)))/sqrt(N)
    at flat index n2*N1 + n1.  The positive phase sign makes this the exact
    large-distance limit of :func:`near_field_steering`.
    """
    _check_angles(theta, phi)
    path = _far_phase_terms(geom, theta, phi)
    s = np.exp(1j * geom.wavenumber * path)
    return s.ravel() / np.sqrt(geom.n_elements)


def element_distance(geom: ArrayGeometry, theta: float, phi: float, r: float,
                     n1: int, n2: int) -> float:
    "Distance from element (n1, n2) to a scatter at (theta, phi, r)."
    _check_angles(theta, phi)
    _check_distance(r)
    if not 0 <= n1 < geom.n1:
        raise ValueError(f"n1 index {n1} outside [0, {geom.n1})")
    if not 0 <= n2 < geom.n2:
        raise ValueError(f"n2 index {n2} outside [0, {geom.n2})")
    a = r * np.sin(theta) * np.cos(phi)
    b = r * np.sin(theta) * np.sin(phi) - n1 * geom.d
    c = r * np.cos(theta) - n2 * geom.d
    return float(np.sqrt(a * a + b * b + c * c))


def _element_distances(geom: ArrayGeometry, theta: float, phi: float, r: float):
    """Per-element scatter distances plus the cartesian offsets, (N2, N1) grids."""
    n1 = np.arange(geom.n1)[None, :]
    n2 = np.arange(geom.n2)[:, None]
    a = r * np.sin(theta) * np.cos(phi)
    b = r * np.sin(theta) * np.sin(phi) - n1 * geom.d
    c = r * np.cos(theta) - n2 * geom.d
    rho = np.sqrt(a * a + b * b + c * c)
    return rho, a, b, c


def near_field_steering(geom: ArrayGeometry, theta: float, phi: float, r: float) -> np.ndarray:
    """Spherical-wavefront array response, unit norm, length N1*N2.

    Entry (n1, n2) is exp(-j*k*(rho(n1, n2) - r))/sqrt(N) with rho the exact
    element-to-scatter distance; the reference phase at element (0, 0) is zero.
    Same flat layout as :func:`far_field_steering`.
    """
    _check_angles(theta, phi)
    _check_distance(r)
    rho, _, _, _ = _element_distances(geom, theta, phi, r)
    s = np.exp(-1j * geom.wavenumber * (rho - r))
    return s.ravel() / np.sqrt(geom.n_elements)


def steering(geom: ArrayGeometry, theta: float, phi: float, r: float, label: int) -> np.ndarray:
    "Response for one path: label 0 selects the near-field kernel, 1 the far-field one."
    if label not in _LABELS:
        raise ValueError(f"label must be 0 (near) or 1 (far), got {label}")
    if label == FAR:
        return far_field_steering(geom, theta, phi)
    return near_field_steering(geom, theta, phi, r)


def steering_gradients(geom: ArrayGeometry, theta: float, phi: float, r: float,
                       label: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Entrywise derivatives of the steering vector w.r.t. theta, phi and r.

    For a far-field path the distance derivative is identically zero.  The
    near-field derivatives chain through the element-to-scatter distance.
    """
    if label not in _LABELS:
        raise ValueError(f"label must be 0 (near) or 1 (far), got {label}")
    k = geom.wavenumber
    n = geom.n_elements
    if label == FAR:
        s = far_field_steering(geom, theta, phi)
        n1 = np.arange(geom.n1)
        n2 = np.arange(geom.n2)
        dpath_dtheta = np.add.outer(-n2 * geom.d * np.sin(theta),
                                    n1 * geom.d * np.sin(phi) * np.cos(theta)).ravel()
        dpath_dphi = np.add.outer(np.zeros(geom.n2),
                                  n1 * geom.d * np.cos(phi) * np.sin(theta)).ravel()
        ds_dtheta = s * (1j * k) * dpath_dtheta
        ds_dphi = s * (1j * k) * dpath_dphi
        ds_dr = np.zeros(n, dtype=complex)
        return ds_dtheta, ds_dphi, ds_dr

    _check_angles(theta, phi)
    _check_distance(r)
    rho, a, b, c = _element_distances(geom, theta, phi, r)
    st, ct = np.sin(theta), np.cos(theta)
    sp, cp = np.sin(phi), np.cos(phi)
    drho_dtheta = (a * r * ct * cp + b * r * ct * sp - c * r * st) / rho
    drho_dphi = (-a * r * st * sp + b * r * st * cp) / rho
    drho_dr = (a * st * cp + b * st * sp + c * ct) / rho
    s = np.exp(-1j * k * (rho - r)) / np.sqrt(n)
    ds_dtheta = (s * (-1j * k) * drho_dtheta).ravel()
    ds_dphi = (s * (-1j * k) * drho_dphi).ravel()
    ds_dr = (s * (-1j * k) * (drho_dr - 1.0)).ravel()
    return ds_dtheta, ds_dphi, ds_dr
