"""Generative near-far field channel model.

A channel realization is the sum of L deterministic scatter paths plus a
circularly-symmetric complex Gaussian diffuse term with per-entry variance
sigma2 (variance split evenly between real and imaginary parts).  Each path
carries a complex gain beta, arrival angles (theta, phi) and a scatter
distance r; a binary label picks the near- or far-field steering kernel.

Scenario sampling follows the simulation configuration used throughout:
theta ~ U(pi/3, 2pi/3), phi ~ U(-pi/6, pi/6), gains lambda/(4 pi r) * CN(0,1),
near-labeled distances U(r_min, r_RD).  Far-labeled paths draw their
distance from U(r_RD, 4 r_RD); the distance only sets the gain scale there
since the far-field kernel ignores it.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .steering import NEAR, FAR, ArrayGeometry, rayleigh_distance, steering

_SAMPLES_MAGIC = b"NFSAMP1\n"


@dataclass(frozen=True)
class PathParams:
    "One deterministic path: complex gain, arrival angles (rad), distance (m)."
    beta: complex
    theta: float
    phi: float
    r: float

    def __post_init__(self):
        if not self.r > 0:
            raise ValueError(f"path distance must be positive, got {self.r}")


@dataclass(frozen=True)
class FieldHypothesis:
    """Binary label per path: 0 = near-field, 1 = far-field.

    Hypotheses are ordered canonically by the integer whose l-th bit
    (least significant = path 0) is the label of path l.
    """

    labels: tuple[int, ...]

    def __post_init__(self):
        if any(z not in (NEAR, FAR) for z in self.labels):
            raise ValueError(f"labels must be 0/1, got {self.labels}")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def index(self) -> int:
        return sum(z << l for l, z in enumerate(self.labels))

    @classmethod
    def from_index(cls, index: int, num_paths: int) -> "FieldHypothesis":
        if not 0 <= index < (1 << num_paths):
            raise ValueError(f"hypothesis index {index} out of range for L={num_paths}")
        return cls(tuple((index >> l) & 1 for l in range(num_paths)))

    @classmethod
    def all_hypotheses(cls, num_paths: int) -> list["FieldHypothesis"]:
        return [cls.from_index(i, num_paths) for i in range(1 << num_paths)]


@dataclass
class ChannelModelParams:
    "Deterministic paths plus the diffuse per-entry variance sigma2."
    paths: list[PathParams]
    sigma2: float

    def __post_init__(self):
        if len(self.paths) < 1:
            raise ValueError("at least one path required")
        if not self.sigma2 > 0:
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")

    @property
    def num_paths(self) -> int:
        return len(self.paths)


@dataclass
class ChannelSampleSet:
    "S observed channel vectors stacked as an (S, N) complex array."
    samples: np.ndarray

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=complex)
        if self.samples.ndim != 2 or self.samples.shape[0] < 1:
            raise ValueError(f"samples must be a nonempty (S, N) array, got shape {self.samples.shape}")

    @property
    def num_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def num_elements(self) -> int:
        return self.samples.shape[1]


@dataclass
class ScenarioConfig:
    """Random scenario description: geometry, path mix and draw ranges.

    gamma is the ratio of near-field to far-field path counts; the near
    count is round(L * gamma / (1 + gamma)).  With strict_gamma set, a
    gamma that cannot be realized exactly by integer counts is an error.
    """

    geometry: ArrayGeometry
    num_paths: int
    gamma: float
    k_factor_db: float
    num_samples: int
    theta_range: tuple[float, float] = (np.pi / 3, 2 * np.pi / 3)
    phi_range: tuple[float, float] = (-np.pi / 6, np.pi / 6)
    r_min: float = 4.0
    seed: int = 0
    strict_gamma: bool = False

    def __post_init__(self):
        if self.num_paths < 1:
            raise ValueError("num_paths must be >= 1")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.num_samples < 1:
            raise ValueError("num_samples must be >= 1")
        if not np.isfinite(self.k_factor_db):
            raise ValueError("k_factor_db must be finite")
        if self.r_min <= 0:
            raise ValueError("r_min must be positive")

    def near_path_count(self) -> int:
        exact = self.num_paths * self.gamma / (1.0 + self.gamma)
        count = int(round(exact))
        if self.strict_gamma and abs(exact - count) > 1e-9:
            raise ValueError(
                f"gamma={self.gamma} not realizable with {self.num_paths} paths "
                f"(near count {exact} is not an integer)")
        return count


def mean_channel(geom: ArrayGeometry, params: ChannelModelParams,
                 z: FieldHypothesis) -> np.ndarray:
    "Deterministic channel component sum_l beta_l * s(theta_l, phi_l, r_l | z_l)."
    if len(z) != params.num_paths:
        raise ValueError(f"label count {len(z)} != path count {params.num_paths}")
    out = np.zeros(geom.n_elements, dtype=complex)
    for path, label in zip(params.paths, z.labels):
        out += path.beta * steering(geom, path.theta, path.phi, path.r, label)
    return out


def sigma2_for_K(mean: np.ndarray, k_factor_db: float, n_elements: int) -> float:
    """Diffuse variance that realizes a target deterministic-to-diffuse ratio.

    K (linear) = ||mean||^2 / (N * sigma2), so sigma2 = ||mean||^2 / (N * 10^(K_dB/10)).
    """
    if n_elements < 1:
        raise ValueError("n_elements must be >= 1")
    power = float(np.vdot(mean, mean).real)
    if power <= 0:
        raise ValueError("mean channel must be nonzero to set a power ratio")
    return power / (n_elements * 10.0 ** (k_factor_db / 10.0))


def sample_channels(geom: ArrayGeometry, params: ChannelModelParams,
                    z: FieldHypothesis, num_samples: int,
                    rng: np.random.Generator) -> ChannelSampleSet:
    "Draw i.i.d. channel vectors mean + CN(0, sigma2 I), deterministic given rng state."
    if num_samples < 1:
        raise ValueError("num_samples must be >= 1")
    mean = mean_channel(geom, params, z)
    scale = np.sqrt(params.sigma2 / 2.0)
    noise = rng.standard_normal((num_samples, geom.n_elements))
    noise = noise + 1j * rng.standard_normal((num_samples, geom.n_elements))
    return ChannelSampleSet(mean[None, :] + scale * noise)


def draw_scenario(cfg: ScenarioConfig,
                  rng: np.random.Generator) -> tuple[ChannelModelParams, FieldHypothesis]:
    """Sample path parameters and labels for one scenario.

    Labels are a random permutation of the exact near/far counts implied by
    gamma.  sigma2 is set from the drawn deterministic component so the
    realized power ratio hits k_factor_db exactly.
    """
    geom = cfg.geometry
    n_near = cfg.near_path_count()
    r_rd = rayleigh_distance(geom)
    if r_rd <= cfg.r_min and n_near > 0:
        raise ValueError(
            f"near-field draw range is empty: rayleigh distance {r_rd:.3g} <= r_min {cfg.r_min:.3g}")

    L = cfg.num_paths
    thetas = rng.uniform(cfg.theta_range[0], cfg.theta_range[1], size=L)
    phis = rng.uniform(cfg.phi_range[0], cfg.phi_range[1], size=L)
    labels = np.array([NEAR] * n_near + [FAR] * (L - n_near))
    labels = labels[rng.permutation(L)]
    near_mask = labels == NEAR
    radii = np.empty(L)
    radii[near_mask] = rng.uniform(cfg.r_min, r_rd, size=int(near_mask.sum()))
    radii[~near_mask] = rng.uniform(r_rd, 4.0 * r_rd, size=int((~near_mask).sum()))
    gains = (rng.standard_normal(L) + 1j * rng.standard_normal(L)) / np.sqrt(2.0)
    gains = gains * geom.wavelength / (4.0 * np.pi * radii)

    paths = [PathParams(beta=complex(gains[l]), theta=float(thetas[l]),
                        phi=float(phis[l]), r=float(radii[l])) for l in range(L)]
    hypothesis = FieldHypothesis(tuple(int(v) for v in labels))
    mean = np.zeros(geom.n_elements, dtype=complex)
    for path, label in zip(paths, hypothesis.labels):
        mean += path.beta * steering(geom, path.theta, path.phi, path.r, label)
    sigma2 = sigma2_for_K(mean, cfg.k_factor_db, geom.n_elements)
    return ChannelModelParams(paths=paths, sigma2=sigma2), hypothesis


# ---------------------------------------------------------------------------
# Serialization.  Text layout: optional "# key=value" provenance lines, a
# "sample,element,real,imag" header, then one row per (sample, element).
# Binary layout: 8-byte magic, little-endian uint32 header length, a JSON
# header (carries s, n and provenance), then S*N little-endian float64
# (real, imag) pairs in row-major sample order.
# ---------------------------------------------------------------------------

def save_samples_text(path, sample_set: ChannelSampleSet, provenance: dict | None = None):
    with open(path, "w") as fh:
        for key, value in (provenance or {}).items():
            fh.write(f"# {key}={value}\n")
        fh.write("sample,element,real,imag\n")
        for s_idx in range(sample_set.num_samples):
            row = sample_set.samples[s_idx]
            for e_idx in range(sample_set.num_elements):
                v = row[e_idx]
                fh.write(f"{s_idx},{e_idx},{float(v.real)!r},{float(v.imag)!r}\n")


def load_samples_text(path) -> tuple[ChannelSampleSet, dict]:
    provenance = {}
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line.lstrip("# ").partition("=")
                provenance[key] = value
                continue
            if line.startswith("sample,"):
                continue
            s_idx, e_idx, re_part, im_part = line.split(",")
            rows.append((int(s_idx), int(e_idx), float(re_part), float(im_part)))
    if not rows:
        raise ValueError(f"no sample rows found in {path}")
    num_samples = max(r[0] for r in rows) + 1
    num_elements = max(r[1] for r in rows) + 1
    data = np.zeros((num_samples, num_elements), dtype=complex)
    for s_idx, e_idx, re_part, im_part in rows:
        data[s_idx, e_idx] = re_part + 1j * im_part
    return ChannelSampleSet(data), provenance


def save_samples_binary(path, sample_set: ChannelSampleSet, provenance: dict | None = None):
    header = dict(provenance or {})
    header["s"] = sample_set.num_samples
    header["n"] = sample_set.num_elements
    blob = json.dumps(header, sort_keys=True).encode()
    interleaved = np.empty((sample_set.num_samples, sample_set.num_elements, 2))
    interleaved[:, :, 0] = sample_set.samples.real
    interleaved[:, :, 1] = sample_set.samples.imag
    with open(path, "wb") as fh:
        fh.write(_SAMPLES_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(interleaved.astype("<f8").tobytes())


def load_samples_binary(path) -> tuple[ChannelSampleSet, dict]:
    with open(path, "rb") as fh:
        magic = fh.read(len(_SAMPLES_MAGIC))
        if magic != _SAMPLES_MAGIC:
            raise ValueError(f"{path} is not a binary sample-set file")
        (blob_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(blob_len).decode())
        num_samples, num_elements = int(header["s"]), int(header["n"])
        payload = np.frombuffer(fh.read(num_samples * num_elements * 16), dtype="<f8")
    interleaved = payload.reshape(num_samples, num_elements, 2)
    data = interleaved[:, :, 0] + 1j * interleaved[:, :, 1]
    provenance = {k: v for k, v in header.items() if k not in ("s", "n")}
    return ChannelSampleSet(data), provenance
