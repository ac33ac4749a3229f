"""ERP waveforms, noise generation, measurement simulation and randomized
test-case scenarios.

All randomness goes through Philox (counter-based) generators keyed by a
64-bit seed plus a spawn key, so any sub-stream can be regenerated without
touching the others.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import ConfigError, LeadField, Measurements, NoiseSpec, Scenario, SourceSpace

FWHM_TO_STD = 1.0 / (2.0 * np.sqrt(2.0 * np.log(2.0)))
MAX_REJECTIONS = 10 ** 6

# (latency ms, FWHM ms, amplitude) of the reference evoked response
REFERENCE_ERP_PEAKS = ((500.0, 200.0, 1.0), (300.0, 300.0, 1.2), (200.0, 100.0, 0.6))


def rng_for(seed: int, *key: int) -> np.random.Generator:
    """Independent Philox stream for ``seed`` and an integer spawn key."""
    ss = np.random.SeedSequence(int(seed) & (2 ** 64 - 1), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class ErpSpec:
    peaks: tuple = REFERENCE_ERP_PEAKS
    duration: float = 1000.0  # ms
    fs: float = 1000.0

    def __post_init__(self):
        object.__setattr__(self, "peaks", tuple(tuple(float(v) for v in p) for p in self.peaks))
        for lat, width, _ in self.peaks:
            if width <= 0:
                raise ValueError("peak widths must be positive")
            if not 0 <= lat <= self.duration:
                raise ValueError("peak latency outside duration")
        if self.fs <= 0:
            raise ValueError("fs must be positive")

    @property
    def n_times(self) -> int:
        return int(round(self.duration * self.fs / 1000.0))

    def to_dict(self) -> dict:
        return {"peaks": [list(p) for p in self.peaks], "duration": self.duration, "fs": self.fs}

    @classmethod
    def from_dict(cls, d: dict) -> "ErpSpec":
        return cls(tuple(tuple(p) for p in d.get("peaks", REFERENCE_ERP_PEAKS)),
                   float(d.get("duration", 1000.0)), float(d.get("fs", 1000.0)))


def erp_waveform(spec: ErpSpec) -> np.ndarray:
    """Sum of Gaussian peaks whose declared width is the FWHM."""
    t = np.arange(spec.n_times) * 1000.0 / spec.fs
    out = np.zeros(spec.n_times)
    for lat, width, amp in spec.peaks:
        sd = width * FWHM_TO_STD
        out += amp * np.exp(-0.5 * ((t - lat) / sd) ** 2)
    return out


# -- noise ----------------------------------------------------------------------

_SLOPES = {"white": 0.0, "pink": 1.0, "brown": 2.0}


def colored_channel(kind: str, n_times: int, rng: np.random.Generator) -> np.ndarray:
    """One unscaled channel with power spectrum proportional to 1/f^beta."""
    white = rng.standard_normal(n_times)
    beta = _SLOPES[kind]
    if beta == 0.0 or n_times < 2:
        return white
    spec = np.fft.rfft(white)
    f = np.fft.rfftfreq(n_times)
    spec[0] = 0.0
    spec[1:] *= f[1:] ** (-beta / 2.0)
    return np.fft.irfft(spec, n=n_times)


def gen_noise(kind: str, amplitude: float, n_channels: int, n_times: int, fs: float, seed: int,
              trial: int = 0) -> np.ndarray:
    """Colored noise, one independent stream per channel.

    Each channel is rescaled so its maximum absolute value equals
    ``amplitude`` (µV). ``fs`` only fixes the frequency axis, which does
    not change the shape of a pure power law.
    """
    if kind not in _SLOPES:
        raise ValueError(f"unknown noise kind {kind!r}")
    if amplitude <= 0:
        raise ValueError("noise amplitude must be positive")
    out = np.empty((n_channels, n_times))
    for c in range(n_channels):
        x = colored_channel(kind, n_times, rng_for(seed, trial, c))
        peak = np.max(np.abs(x))
        out[c] = x * (amplitude / peak) if peak > 0 else 0.0
    return out


def add_sensor_noise(Y, percent: float, seed: int, fs: float = 1000.0) -> Measurements:
    """Add i.i.d. Gaussian noise with std = percent/100 * max|Y|."""
    Y = np.asarray(Y.data if isinstance(Y, Measurements) else Y, dtype=float)
    if percent < 0:
        raise ValueError("percent must be non-negative")
    if percent == 0:
        return Measurements(Y.copy(), fs, "sensor noise 0%")
    sd = percent / 100.0 * np.max(np.abs(Y))
    noise = rng_for(seed, 0xE5E).standard_normal(Y.shape) * sd
    return Measurements(Y + noise, fs, f"sensor noise {percent:g}%")


# -- forward simulation -----------------------------------------------------------

def source_matrix(lf: LeadField, scenario: Scenario) -> np.ndarray:
    """Ground-truth ``X`` of shape (dof*M, T) in the lead field's column units."""
    dof = lf.dof
    idx = scenario.active_indices
    if idx.size and (idx.min() < 0 or idx.max() >= lf.n_sources):
        raise ConfigError("scenario source index outside the lead field")
    X = np.zeros((dof * lf.n_sources, scenario.n_times))
    orient = scenario.active_orientations
    if isinstance(orient, str):
        if orient == "free":
            if dof == 1:
                raise ConfigError("orientation 'free' needs a free-orientation (dof=3) lead field")
            dirs = rng_for(scenario.seed, 0x0E).standard_normal((idx.size, 3))
            orient = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
        elif orient == "fixed":
            if dof == 3:
                so = lf.source_space.orientations
                if isinstance(so, str):
                    raise ConfigError("orientation 'fixed' needs source-space orientations")
                orient = so[idx]
        else:
            raise ConfigError(f"unknown orientation marker {orient!r}")
    elif dof == 1:
        raise ConfigError("explicit moment orientations need a free-orientation (dof=3) lead field")
    for k, j in enumerate(idx):
        if dof == 1:
            X[j] += scenario.waveforms[k]
        else:
            X[3 * j:3 * j + 3] += np.outer(orient[k], scenario.waveforms[k])
    return X


def simulate_measurements(lf: LeadField, scenario: Scenario, trial: int = 0) -> Measurements:
    """``Y = K X + E`` with ``E`` drawn from the scenario's noise spec and seed."""
    X = source_matrix(lf, scenario)
    active = np.flatnonzero(np.any(X != 0, axis=1))
    Y = lf.gain[:, active] @ X[active]
    noise = scenario.noise
    if noise.kind in ("white", "pink", "brown"):
        Y = Y + gen_noise(noise.kind, noise.amplitude, Y.shape[0], Y.shape[1], scenario.fs, scenario.seed, trial)
    elif noise.kind == "sensor_percent":
        Y = add_sensor_noise(Y, noise.amplitude, scenario.seed).data
    elif noise.kind != "none":
        raise ConfigError(f"unknown noise kind {noise.kind!r}")
    return Measurements(Y, scenario.fs, f"scenario:{scenario.name or 'unnamed'} seed:{scenario.seed}")


# -- test cases -------------------------------------------------------------------

@dataclass(frozen=True)
class DepthBand:
    """``count`` sources with ``min_radius <= |r| <= max_radius`` (mm)."""

    count: int
    min_radius: float | None = None
    max_radius: float | None = None

    def admits(self, depth: np.ndarray) -> np.ndarray:
        ok = np.ones(depth.shape, bool)
        if self.min_radius is not None:
            ok &= depth >= self.min_radius
        if self.max_radius is not None:
            ok &= depth <= self.max_radius
        return ok


@dataclass(frozen=True)
class Separation:
    """Pairwise distance bounds (mm), over all sources or within one band."""

    min_distance: float | None = None
    max_distance: float | None = None
    within_band: int | None = None


@dataclass(frozen=True)
class TestCaseSpec:
    __test__ = False  # keep pytest from collecting this class

    name: str
    bands: tuple
    separations: tuple = ()
    noise: NoiseSpec = field(default_factory=NoiseSpec)

    @property
    def n_sources(self) -> int:
        return sum(b.count for b in self.bands)

    def check(self, positions: np.ndarray) -> bool:
        """True when ``positions`` (ordered band by band) satisfy every predicate."""
        depth = np.linalg.norm(positions, axis=1)
        start = 0
        groups = []
        for b in self.bands:
            sl = slice(start, start + b.count)
            if not np.all(b.admits(depth[sl])):
                return False
            groups.append(sl)
            start += b.count
        for sep in self.separations:
            p = positions if sep.within_band is None else positions[groups[sep.within_band]]
            if len(p) < 2:
                continue
            d = np.linalg.norm(p[:, None] - p[None], axis=2)[np.triu_indices(len(p), 1)]
            if sep.min_distance is not None and np.any(d < sep.min_distance):
                return False
            if sep.max_distance is not None and np.any(d > sep.max_distance):
                return False
        return True

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "bands": [b.__dict__.copy() for b in self.bands],
            "separations": [s.__dict__.copy() for s in self.separations],
            "noise": self.noise.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TestCaseSpec":
        return cls(d["name"], tuple(DepthBand(**b) for b in d["bands"]),
                   tuple(Separation(**s) for s in d.get("separations", ())),
                   NoiseSpec.from_dict(d.get("noise", {})))


def _scaled(v, s):
    return None if v is None else v * s


def standard_test_case(name: str, scale: float = 1.0) -> TestCaseSpec:
    """The four Monte-Carlo test cases plus the deep-source CARSS case.

    Distances are in the reference head's mm; ``scale`` shrinks every
    radius and distance bound for smaller synthetic heads.
    """
    s = scale
    key = name.upper().replace("TC-", "").replace("TC", "")
    if key == "I":
        return TestCaseSpec("TC-I", (DepthBand(1),))
    if key == "II":
        return TestCaseSpec("TC-II", (DepthBand(3, _scaled(90.0, s)),), (Separation(_scaled(80.0, s)),))
    if key == "III":
        return TestCaseSpec("TC-III", (DepthBand(3, None, _scaled(60.0, s)),
                                       DepthBand(1, _scaled(60.0, s), _scaled(80.0, s)),
                                       DepthBand(1, _scaled(70.0, s))),
                            (Separation(_scaled(70.0, s)),))
    if key == "IV":
        return TestCaseSpec("TC-IV", (DepthBand(4, None, _scaled(60.0, s)),
                                      DepthBand(1, _scaled(60.0, s), _scaled(70.0, s)),
                                      DepthBand(2, _scaled(70.0, s))),
                            (Separation(None, _scaled(55.0, s), within_band=0),))
    if key == "DEEP":
        return TestCaseSpec("DEEP", (DepthBand(1, None, _scaled(40.0, s)),))
    raise ValueError(f"unknown test case {name!r}")


def test_case_from_config(entry, scale: float = 1.0) -> TestCaseSpec:
    if isinstance(entry, str):
        return standard_test_case(entry, scale)
    return TestCaseSpec.from_dict(entry)


test_case_from_config.__test__ = False
standard_test_case.__test__ = False


def sample_scenario(tc: TestCaseSpec, ss: SourceSpace, seed: int, erp: ErpSpec | None = None,
                    noise: NoiseSpec | None = None, max_rejections: int = MAX_REJECTIONS) -> Scenario:
    """Draw active sources satisfying ``tc`` by rejection sampling.

    Each band draws uniformly (without replacement) from its admissible
    sources; draws are rejected until the separation predicates hold.
    """
    erp = erp or ErpSpec()
    rng = rng_for(seed, 0x5CE)
    depth = ss.depth
    pools = [np.flatnonzero(b.admits(depth)) for b in tc.bands]
    for b, pool in zip(tc.bands, pools):
        if len(pool) < b.count:
            raise ValueError("constraints unsatisfiable: band has too few admissible sources")
    for _ in range(max_rejections):
        cand = np.concatenate([rng.choice(pool, b.count, replace=False) for b, pool in zip(tc.bands, pools)])
        if len(np.unique(cand)) == cand.size and tc.check(ss.positions[cand]):
            break
    else:
        raise ValueError(f"constraints unsatisfiable after {max_rejections} rejections")
    chosen = cand
    wave = erp_waveform(erp)
    waveforms = np.tile(wave, (chosen.size, 1))
    if ss.dof == 3:
        dirs = rng.standard_normal((chosen.size, 3))
        orient = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    else:
        orient = "fixed"
    return Scenario(chosen, orient, waveforms, erp.fs, noise or tc.noise, seed, tc.name)
