"""Spectral samples, CSV ingestion, splitting and a synthetic scene generator."""

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng

N_RAW_BANDS = 125
N_BANDS = 115
N_FEATURES = N_BANDS + 1
TRIM = 5
RAW_START_NM = 450.0
BAND_STEP_NM = 4.0

LWIR_COLUMN = "lwir_c"
TARGET_COLUMN = "soil_moisture_pct"
PLOT_COLUMN = "plot_id"
RECORD_COLUMN = "record_id"
BAND_PREFIX = "band_"

# centre of the moisture-sensitive absorption feature of the synthetic scene
ABSORPTION_NM = 826.0


class DataError(ValueError):
    """Raised for malformed or invalid input data."""


def raw_wavelengths():
    return RAW_START_NM + BAND_STEP_NM * np.arange(N_RAW_BANDS)


@dataclass(frozen=True)
class BandAxis:
    wavelengths: np.ndarray = field(default_factory=lambda: trim_bands(raw_wavelengths()))

    def __post_init__(self):
        wl = np.asarray(self.wavelengths, dtype=float)
        if wl.shape != (N_BANDS,):
            raise DataError(f"band axis needs {N_BANDS} wavelengths, got {wl.size}")
        if not np.allclose(np.diff(wl), BAND_STEP_NM) or not math.isclose(wl[0], 470.0):
            raise DataError("band axis must run 470-926 nm at 4 nm spacing")
        wl.setflags(write=False)
        object.__setattr__(self, "wavelengths", wl)

    def index_of(self, nm):
        """Index of the band closest to wavelength ``nm``."""
        return int(np.argmin(np.abs(self.wavelengths - nm)))

    def labels(self):
        """Feature labels: one per band plus the LWIR column."""
        return [f"{w:g}" for w in self.wavelengths] + ["LWIR"]


@dataclass(frozen=True)
class SpectralSample:
    reflectance: np.ndarray
    lwir: float
    soil_moisture: float
    plot_id: int = 0
    record_id: int = 0

    def __post_init__(self):
        r = np.array(self.reflectance, dtype=float)
        if r.shape != (N_BANDS,):
            raise DataError(f"reflectance must have {N_BANDS} entries, got {r.size}")
        if not np.all(np.isfinite(r)) or r.min() < 0.0 or r.max() > 1.0:
            raise DataError("reflectance values must lie in [0, 1]")
        if not math.isfinite(self.lwir):
            raise DataError("LWIR temperature must be finite")
        if not math.isfinite(self.soil_moisture) or self.soil_moisture < 0:
            raise DataError("soil moisture must be finite and >= 0")
        r.setflags(write=False)
        object.__setattr__(self, "reflectance", r)


@dataclass(frozen=True)
class Dataset:
    samples: tuple
    band_axis: BandAxis = field(default_factory=BandAxis)

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def subset(self, indices):
        return Dataset(tuple(self.samples[i] for i in indices), self.band_axis)

    @property
    def targets(self):
        return np.array([s.soil_moisture for s in self.samples], dtype=float)

    @property
    def reflectance(self):
        return np.array([s.reflectance for s in self.samples], dtype=float).reshape(-1, N_BANDS)

    @property
    def lwir(self):
        return np.array([s.lwir for s in self.samples], dtype=float)


@dataclass(frozen=True)
class SplitSpec:
    train_count: int
    test_count: int
    seed: int = 0

    def __post_init__(self):
        if self.train_count <= 0 or self.test_count <= 0:
            raise DataError("train and test counts must both be positive")


def trim_bands(raw):
    """Drop the five outermost bands at each end of a 125-band spectrum."""
    raw = np.asarray(raw)
    if raw.shape[-1] != N_RAW_BANDS:
        raise DataError(f"expected {N_RAW_BANDS} bands, got {raw.shape[-1]}")
    return raw[..., TRIM:N_RAW_BANDS - TRIM]


def _parse_float(text, row, column):
    try:
        return float(text)
    except ValueError:
        raise DataError(f"row {row}: non-numeric value {text!r} in column {column!r}") from None


def load_csv(path):
    """Read a dataset CSV.

    Band columns are named ``band_<wavelength_nm>`` and located by name, so
    column order in the file is irrelevant. Files carrying all 125 raw bands
    are trimmed to the 115 retained bands. Row numbers in error messages are
    1-based data rows (the header is row 0).
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"input file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = list(reader)

    bands = []
    for pos, name in enumerate(header):
        if name.startswith(BAND_PREFIX):
            bands.append((_parse_float(name[len(BAND_PREFIX):], 0, name), pos))
    bands.sort()
    if len(bands) not in (N_RAW_BANDS, N_BANDS):
        raise DataError(f"{path}: expected {N_RAW_BANDS} or {N_BANDS} band columns, found {len(bands)}")
    for name in (LWIR_COLUMN, TARGET_COLUMN):
        if name not in header:
            raise DataError(f"{path}: missing column {name!r}")
    band_pos = [p for _, p in bands]
    wavelengths = np.array([w for w, _ in bands])
    if len(bands) == N_RAW_BANDS:
        band_pos = band_pos[TRIM:N_RAW_BANDS - TRIM]
        wavelengths = trim_bands(wavelengths)
    axis = BandAxis(wavelengths)
    col = {name: i for i, name in enumerate(header)}

    samples = []
    for i, row in enumerate(rows, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DataError(f"row {i}: expected {len(header)} columns, got {len(row)}")
        refl = np.array([_parse_float(row[p], i, header[p]) for p in band_pos])
        bad = np.flatnonzero(~((refl >= 0.0) & (refl <= 1.0)))
        if bad.size:
            raise DataError(f"row {i}: reflectance {refl[bad[0]]} outside [0, 1] "
                            f"in column {header[band_pos[bad[0]]]!r}")
        meta = {}
        for name in (PLOT_COLUMN, RECORD_COLUMN):
            meta[name] = int(_parse_float(row[col[name]], i, name)) if name in col else (i - 1 if name == RECORD_COLUMN else 0)
        try:
            samples.append(SpectralSample(
                refl,
                _parse_float(row[col[LWIR_COLUMN]], i, LWIR_COLUMN),
                _parse_float(row[col[TARGET_COLUMN]], i, TARGET_COLUMN),
                meta[PLOT_COLUMN],
                meta[RECORD_COLUMN],
            ))
        except DataError as exc:
            raise DataError(f"row {i}: {exc}") from None
    return Dataset(tuple(samples), axis)


def write_csv(dataset, path):
    header = [f"{BAND_PREFIX}{w:g}" for w in dataset.band_axis.wavelengths]
    header += [LWIR_COLUMN, TARGET_COLUMN, PLOT_COLUMN, RECORD_COLUMN]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for s in dataset:
            writer.writerow([repr(float(v)) for v in s.reflectance]
                            + [repr(float(s.lwir)), repr(float(s.soil_moisture)), s.plot_id, s.record_id])


def split_train_test(dataset, spec):
    """Randomly partition ``dataset`` into (train, test) of the requested sizes."""
    if spec.train_count + spec.test_count != len(dataset):
        raise DataError(f"split counts {spec.train_count}+{spec.test_count} "
                        f"do not sum to dataset size {len(dataset)}")
    perm = rng.permutation(len(dataset), spec.seed)
    return dataset.subset(perm[:spec.train_count]), dataset.subset(perm[spec.train_count:])


def assemble_features(dataset):
    """Feature matrix (115 bands then LWIR per row) and target vector."""
    if len(dataset) == 0:
        raise DataError("cannot assemble features of an empty dataset")
    X = np.column_stack([dataset.reflectance, dataset.lwir])
    return X, dataset.targets


def target_histogram(dataset, n_bins):
    """Equal-width histogram of the targets over [min, max]."""
    if n_bins < 1:
        raise DataError("n_bins must be >= 1")
    if len(dataset) == 0:
        raise DataError("cannot histogram an empty dataset")
    y = dataset.targets
    counts, edges = np.histogram(y, bins=n_bins, range=(y.min(), y.max()))
    return edges, counts


def write_histogram_csv(edges, counts, path):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["bin_left", "bin_right", "count"])
        for left, right, c in zip(edges[:-1], edges[1:], counts):
            writer.writerow([repr(float(left)), repr(float(right)), int(c)])


@dataclass(frozen=True)
class SynthConfig:
    """Settings of the synthetic grassland scene.

    ``noise`` scales every stochastic nuisance term at once; ``noise=0``
    makes reflectance and LWIR a deterministic function of soil moisture.
    """

    n_samples: int = 1332
    moisture_min: float = 8.0
    moisture_max: float = 28.0
    noise: float = 1.0
    band_noise_sd: float = 0.004
    illumination_sd: float = 0.04
    vegetation_sd: float = 0.1
    lwir_noise_sd: float = 1.0
    target_noise_sd: float = 1.5
    n_plots: int = 8

    def __post_init__(self):
        if self.n_samples <= 0:
            raise DataError("n_samples must be positive")
        if not self.moisture_max > self.moisture_min or self.moisture_min < 0:
            raise DataError("moisture range must satisfy 0 <= min < max")
        if self.noise < 0:
            raise DataError("noise level must be >= 0")


def _gauss(wl, centre, width):
    return np.exp(-0.5 * ((wl - centre) / width) ** 2)


def soil_curve(wl):
    return 0.12 + 0.22 * (wl - 470.0) / 456.0


def vegetation_curve(wl):
    return (0.04 + 0.05 * _gauss(wl, 550.0, 25.0) - 0.02 * _gauss(wl, 670.0, 15.0)
            + 0.42 / (1.0 + np.exp(-(wl - 715.0) / 10.0)))


def absorption_depth(moisture_frac):
    """Depth of the 826 nm feature; strictly increasing on [0, 1]."""
    return 0.02 + 0.18 * np.asarray(moisture_frac) ** 2


def brightness(moisture_frac):
    """Overall amplitude of the spectrum; wetter scenes are darker."""
    return 1.0 - 0.2 * np.asarray(moisture_frac)


def synthetic_spectra(moisture_frac, wl, illumination=1.0, vegetation=0.6):
    """Noise-free reflectance rows for moisture fractions in [0, 1]."""
    m = np.atleast_1d(moisture_frac)[:, None]
    g = np.broadcast_to(np.asarray(illumination, dtype=float), m.shape[:1])[:, None]
    f = np.broadcast_to(np.asarray(vegetation, dtype=float), m.shape[:1])[:, None]
    mix = (1.0 - f) * soil_curve(wl) + f * vegetation_curve(wl)
    return g * brightness(m) * mix - absorption_depth(m) * _gauss(wl, ABSORPTION_NM, 8.0)


def generate_synthetic(config=SynthConfig(), seed=0):
    """Draw a synthetic dataset whose spectra encode soil moisture."""
    gen = rng.numpy_rng(seed, rng.STREAM_SYNTH)
    n = config.n_samples
    axis = BandAxis()
    wl = axis.wavelengths
    lo, hi = config.moisture_min, config.moisture_max
    moisture = gen.uniform(lo, hi, n)
    frac = (moisture - lo) / (hi - lo)
    z_illum, z_veg, z_band, z_lwir, z_target = (
        gen.standard_normal(n), gen.standard_normal(n), gen.standard_normal((n, wl.size)),
        gen.standard_normal(n), gen.standard_normal(n))
    plots = gen.integers(1, config.n_plots + 1, n)
    s = config.noise
    illumination = 1.0 + s * config.illumination_sd * z_illum
    vegetation = np.clip(0.6 + s * config.vegetation_sd * z_veg, 0.2, 0.95)
    refl = synthetic_spectra(frac, wl, illumination, vegetation)
    refl = np.clip(refl + s * config.band_noise_sd * z_band, 0.0, 1.0)
    lwir = 30.0 - 0.35 * moisture + s * config.lwir_noise_sd * z_lwir
    target = np.maximum(moisture + s * config.target_noise_sd * z_target, 0.0)
    samples = tuple(SpectralSample(refl[i], float(lwir[i]), float(target[i]), int(plots[i]), i)
                    for i in range(n))
    return Dataset(samples, axis)
