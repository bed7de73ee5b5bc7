"""Grid-dictionary greedy benchmarks: far-field OMP and polar-domain SOMP.

The far dictionary samples (theta, phi) uniformly over the scenario draw
ranges with planar atoms only.  The polar dictionary adds distance rings
sampled uniformly in 1/r from the Rayleigh distance in to r_min, plus one
planar atom per angle pair as the infinite-distance ring.  Fitting is
simultaneous orthogonal matching pursuit: atoms are selected greedily by
aggregate correlation over all samples, with a joint least-squares
projection after every selection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelModelParams, ChannelSampleSet, FieldHypothesis, PathParams
from .steering import (FAR, NEAR, ArrayGeometry, far_field_steering,
                       near_field_steering, rayleigh_distance)

THETA_RANGE = (np.pi / 3, 2 * np.pi / 3)
PHI_RANGE = (-np.pi / 6, np.pi / 6)


@dataclass(frozen=True)
class AtomParams:
    "Grid location of one dictionary atom; r is None for planar atoms."
    theta: float
    phi: float
    r: float | None
    label: int


@dataclass
class Dictionary:
    "Unit-norm steering atoms as columns of an (N, M) matrix."
    atoms: np.ndarray
    atom_params: list[AtomParams]

    def __post_init__(self):
        if self.atoms.ndim != 2 or self.atoms.shape[1] < 1:
            raise ValueError("atoms must be a nonempty (N, M) matrix")
        if self.atoms.shape[1] != len(self.atom_params):
            raise ValueError("atom metadata length mismatch")

    @property
    def num_atoms(self) -> int:
        return self.atoms.shape[1]


@dataclass
class SompResult:
    params: ChannelModelParams
    labels: FieldHypothesis
    atom_indices: list[int]
    residual_energy: list[float]
    rank_deficient: bool = False


def _grid(lo: float, hi: float, count: int) -> np.ndarray:
    if count < 1:
        raise ValueError("grid counts must be >= 1")
    if count == 1:
        return np.array([(lo + hi) / 2.0])
    return np.linspace(lo, hi, count)


def build_far_dictionary(geom: ArrayGeometry, n_theta: int, n_phi: int,
                         theta_range=THETA_RANGE, phi_range=PHI_RANGE) -> Dictionary:
    "Planar atoms on a uniform angle grid."
    thetas = _grid(*theta_range, n_theta)
    phis = _grid(*phi_range, n_phi)
    atoms = np.empty((geom.n_elements, n_theta * n_phi), dtype=complex)
    meta = []
    col = 0
    for th in thetas:
        for ph in phis:
            atoms[:, col] = far_field_steering(geom, th, ph)
            meta.append(AtomParams(theta=float(th), phi=float(ph), r=None, label=FAR))
            col += 1
    return Dictionary(atoms=atoms, atom_params=meta)


def build_polar_dictionary(geom: ArrayGeometry, n_theta: int, n_phi: int, n_dist: int,
                           r_min: float = 4.0, theta_range=THETA_RANGE,
                           phi_range=PHI_RANGE) -> Dictionary:
    """Angle grid crossed with n_dist near-field distance rings plus a far ring.

    Rings are uniform in 1/r starting at the Rayleigh distance and ending at
    r_min, so n_dist = 1 degenerates to a single ring at the near/far
    boundary.  M = n_theta * n_phi * (n_dist + 1).
    """
    if n_dist < 0:
        raise ValueError("n_dist must be >= 0")
    r_rd = rayleigh_distance(geom)
    if r_min >= r_rd and n_dist > 0:
        raise ValueError(f"r_min {r_min} must lie inside the Rayleigh distance {r_rd}")
    thetas = _grid(*theta_range, n_theta)
    phis = _grid(*phi_range, n_phi)
    if n_dist > 0:
        inv_r = np.linspace(1.0 / r_rd, 1.0 / r_min, n_dist)
        radii = 1.0 / inv_r
    else:
        radii = np.array([])
    atoms = np.empty((geom.n_elements, n_theta * n_phi * (n_dist + 1)), dtype=complex)
    meta = []
    col = 0
    for th in thetas:
        for ph in phis:
            atoms[:, col] = far_field_steering(geom, th, ph)
            meta.append(AtomParams(theta=float(th), phi=float(ph), r=None, label=FAR))
            col += 1
            for rr in radii:
                atoms[:, col] = near_field_steering(geom, th, ph, rr)
                meta.append(AtomParams(theta=float(th), phi=float(ph), r=float(rr), label=NEAR))
                col += 1
    return Dictionary(atoms=atoms, atom_params=meta)


def somp_fit(samples: ChannelSampleSet, dictionary: Dictionary, num_paths: int,
             sigma2: float | None = None, refine: bool = False,
             geom: ArrayGeometry | None = None) -> SompResult:
    """Greedy simultaneous matching pursuit of num_paths atoms.

    Selection maximizes sum_s |<h_s, atom>|^2 over the remaining atoms
    (ties break toward the lowest atom index); after each pick all samples
    are re-projected onto the selected set.  Path gains come from the
    least-squares fit of the sample-mean channel.  A selection that makes
    the set rank deficient stops early and is flagged on the result.

    sigma2 fills the returned parameter container; when None the mean
    residual power per entry is used.
    """
    if num_paths < 1:
        raise ValueError("num_paths must be >= 1")
    if num_paths > dictionary.num_atoms:
        raise ValueError(f"cannot select {num_paths} atoms from {dictionary.num_atoms}")
    data = samples.samples  # (S, N)
    atoms = dictionary.atoms  # (N, M)
    selected: list[int] = []
    available = np.ones(dictionary.num_atoms, dtype=bool)
    resid = data.copy()
    resid_energy = [float(np.real(np.vdot(resid, resid)))]
    rank_deficient = False
    for _ in range(num_paths):
        scores = np.abs(resid.conj() @ atoms) ** 2  # (S, M)
        scores = scores.sum(axis=0)
        scores[~available] = -np.inf
        pick = int(np.argmax(scores))
        trial = selected + [pick]
        basis = atoms[:, trial]
        coef, _, rank, _ = np.linalg.lstsq(basis, data.T, rcond=None)
        if rank < len(trial):
            rank_deficient = True
            break
        selected = trial
        available[pick] = False
        resid = data - (basis @ coef).T
        resid_energy.append(float(np.real(np.vdot(resid, resid))))

    if not selected:
        raise ValueError("no atoms could be selected (dictionary is degenerate)")
    basis = atoms[:, selected]
    h_bar = data.mean(axis=0)
    betas, _, _, _ = np.linalg.lstsq(basis, h_bar, rcond=None)
    if sigma2 is None:
        sigma2 = max(resid_energy[-1] / (data.shape[0] * data.shape[1]), 1e-300)
    nominal_r = _nominal_far_distance(dictionary)
    paths = []
    labels = []
    for idx, beta in zip(selected, betas):
        meta = dictionary.atom_params[idx]
        # planar atoms carry a nominal distance; the far kernel ignores it
        r_val = meta.r if meta.r is not None else nominal_r
        paths.append(PathParams(beta=complex(beta), theta=meta.theta, phi=meta.phi, r=r_val))
        labels.append(meta.label)
    params = ChannelModelParams(paths=paths, sigma2=float(sigma2))
    labels = FieldHypothesis(tuple(labels))
    if refine:
        if geom is None:
            raise ValueError("off-grid refinement needs the array geometry")
        params = _polish_offgrid(geom, h_bar, params, labels)
    return SompResult(params=params, labels=labels,
                      atom_indices=selected, residual_energy=resid_energy,
                      rank_deficient=rank_deficient)


def _nominal_far_distance(dictionary: Dictionary) -> float:
    radii = [m.r for m in dictionary.atom_params if m.r is not None]
    return max(radii) if radii else 1.0


def _polish_offgrid(geom: ArrayGeometry, h_bar: np.ndarray,
                    params: ChannelModelParams, labels: FieldHypothesis) -> ChannelModelParams:
    """One cyclic pass of per-path continuous polish around the grid picks.

    Each path maximizes the correlation of its kernel with the sample-mean
    residual of the other paths; gains are refit jointly afterwards.
    """
    from scipy.optimize import minimize

    from .steering import steering

    paths = list(params.paths)
    r_rd = rayleigh_distance(geom)
    vectors = [steering(geom, p.theta, p.phi, p.r, z)
               for p, z in zip(paths, labels.labels)]
    for l, (path, label) in enumerate(zip(list(paths), labels.labels)):
        target = h_bar - sum(paths[m].beta * vectors[m]
                             for m in range(len(paths)) if m != l)

        def neg_corr(x):
            th = float(np.clip(x[0], *THETA_RANGE))
            ph = float(np.clip(x[1], *PHI_RANGE))
            rr = float(np.clip(x[2], 0.05 * r_rd, 8.0 * r_rd)) if label == NEAR else path.r
            s = steering(geom, th, ph, rr, label)
            return -abs(np.vdot(s, target)) ** 2

        x0 = np.array([path.theta, path.phi, path.r])
        res = minimize(neg_corr, x0, method="Nelder-Mead",
                       options={"maxiter": 200, "xatol": 1e-6, "fatol": 1e-12})
        th = float(np.clip(res.x[0], *THETA_RANGE))
        ph = float(np.clip(res.x[1], *PHI_RANGE))
        rr = float(np.clip(res.x[2], 0.05 * r_rd, 8.0 * r_rd)) if label == NEAR else path.r
        paths[l] = PathParams(beta=path.beta, theta=th, phi=ph, r=rr)
        vectors[l] = steering(geom, th, ph, rr, label)
    basis = np.stack(vectors, axis=1)
    betas, _, _, _ = np.linalg.lstsq(basis, h_bar, rcond=None)
    paths = [PathParams(beta=complex(b), theta=p.theta, phi=p.phi, r=p.r)
             for b, p in zip(betas, paths)]
    return ChannelModelParams(paths=paths, sigma2=params.sigma2)
