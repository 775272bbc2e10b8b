"""Scan ingestion, background normalization, resonance detection and the
CSV formats used by the command line.

CSV dialect: comma separated, '#'-prefixed comment lines carrying
``key: value`` metadata, one header row, repr() floats, UTF-8, LF endings.
"""

import csv
import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.ndimage import binary_dilation, median_filter
from scipy.signal import find_peaks

from .coupling import GapSeries
from .errors import DetectionError, InputError, PreconditionError
from .fitkit import DataSeries, PowerSeries, fit_lorentzian
from .merit import FieldGrid
from .scattering import RealSpectrum

logger = logging.getLogger(__name__)

PORTS = ("drop", "bus")


@dataclass(frozen=True)
class RawScan:
    """Frequency scan with per-port counts and acquisition metadata."""

    freq: np.ndarray
    drop: Optional[np.ndarray] = None
    bus: Optional[np.ndarray] = None
    integration_s: float = 1.0
    gap_nm: Optional[float] = None
    temperature_k: Optional[float] = None
    power_uw: Optional[float] = None

    def __post_init__(self):
        freq = np.array(self.freq, dtype=float, ndmin=1)
        if freq.size > 1 and np.any(np.diff(freq) <= 0):
            raise InputError("scan frequency axis must be strictly ascending")
        object.__setattr__(self, "freq", freq)
        if self.drop is None and self.bus is None:
            raise InputError("scan needs drop and/or bus counts")
        for port in PORTS:
            values = getattr(self, port)
            if values is None:
                continue
            values = np.array(values, dtype=float, ndmin=1)
            if values.shape != freq.shape:
                raise InputError(f"{port} counts length differs from the frequency axis")
            if np.any(values < 0) or not np.all(np.isfinite(values)):
                raise InputError(f"{port} counts must be finite and >= 0")
            object.__setattr__(self, port, values)

    def port(self, name: str) -> np.ndarray:
        if name not in PORTS:
            raise InputError(f"unknown port {name!r}")
        values = getattr(self, name)
        if values is None:
            raise InputError(f"scan has no {name} port")
        return values

    @property
    def metadata(self) -> Dict[str, float]:
        meta = {"integration_s": self.integration_s}
        for key in ("gap_nm", "temperature_k", "power_uw"):
            value = getattr(self, key)
            if value is not None:
                meta[key] = value
        return meta


def _background(y: np.ndarray, half: int) -> np.ndarray:
    """Rolling median with resonance regions excluded."""
    size = 2 * half + 1
    rough = median_filter(y, size=size, mode="nearest")
    with np.errstate(divide="ignore", invalid="ignore"):
        resid = np.where(rough > 0, y / rough - 1.0, 0.0)
    mad = 1.4826 * float(np.median(np.abs(resid - np.median(resid))))
    threshold = max(4.0 * mad, 0.02)
    features = binary_dilation(np.abs(resid) > threshold, iterations=max(1, half // 5))
    masked = np.where(features, np.nan, y)

    stride = max(1, half // 4)
    centers = np.arange(0, y.size, stride)
    if centers[-1] != y.size - 1:
        centers = np.append(centers, y.size - 1)
    levels = np.full(centers.size, np.nan)
    for k, c in enumerate(centers):
        window = masked[max(0, c - half):c + half + 1]
        if np.any(np.isfinite(window)):
            levels[k] = np.nanmedian(window)
    valid = np.isfinite(levels)
    if not valid.any():
        return rough
    return np.interp(np.arange(y.size), centers[valid], levels[valid])


def normalize_to_background(scan: RawScan, window_half_width: float) -> RawScan:
    """Divide every port by a local background estimate.

    The estimate is a rolling median over +-window_half_width (GHz) that
    ignores samples belonging to dips or peaks.
    """
    if scan.freq.size < 2:
        raise InputError("scan needs at least two samples to normalize")
    spacing = float(np.median(np.diff(scan.freq)))
    if not window_half_width >= spacing:
        raise InputError(f"window half-width {window_half_width} GHz is below the grid spacing {spacing} GHz")
    half = int(round(window_half_width / spacing))
    out = {}
    for port in PORTS:
        values = getattr(scan, port)
        if values is None:
            continue
        background = _background(values, half)
        with np.errstate(divide="ignore", invalid="ignore"):
            normalized = np.where(background > 0, values / background, 0.0)
        out[port] = normalized
    logger.debug("Normalized %d samples with a %d-sample half window", scan.freq.size, half)
    return RawScan(
        freq=scan.freq.copy(),
        integration_s=scan.integration_s,
        gap_nm=scan.gap_nm,
        temperature_k=scan.temperature_k,
        power_uw=scan.power_uw,
        **out,
    )


@dataclass(frozen=True)
class Resonance:
    center_ghz: float
    kappa_ghz: float
    q: float
    delta_t: float
    mode_order: str = "unassigned"


@dataclass(frozen=True)
class QStats:
    n: int
    mean: float
    variance: float
    std: float


def q_statistics(values: Sequence[float]) -> QStats:
    """Two-pass mean and sample variance."""
    values = [float(v) for v in values]
    n = len(values)
    if n == 0:
        raise PreconditionError("no Q values")
    mean = math.fsum(values) / n
    variance = math.fsum((v - mean) ** 2 for v in values) / (n - 1) if n > 1 else 0.0
    return QStats(n=n, mean=mean, variance=variance, std=math.sqrt(variance))


@dataclass(frozen=True)
class ResonanceTable:
    rows: Tuple[Resonance, ...] = ()

    def __post_init__(self):
        rows = tuple(sorted(self.rows, key=lambda r: r.center_ghz))
        if any(r.q <= 0 for r in rows):
            raise PreconditionError("resonance Q must be > 0")
        object.__setattr__(self, "rows", rows)

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    @property
    def centers(self) -> np.ndarray:
        return np.array([r.center_ghz for r in self.rows])

    def by_order(self) -> Dict[str, List[Resonance]]:
        groups: Dict[str, List[Resonance]] = {}
        for r in self.rows:
            groups.setdefault(r.mode_order, []).append(r)
        return groups

    def statistics(self) -> Dict[str, QStats]:
        """Q statistics for every mode order plus 'all'."""
        stats = {"all": q_statistics([r.q for r in self.rows])} if self.rows else {}
        for order, rows in self.by_order().items():
            stats[order] = q_statistics([r.q for r in rows])
        return stats


def assign_mode_orders(
    centers: Sequence[float],
    fsr_candidates: Sequence[float],
    tolerance: float = 0.05,
    min_chain: int = 3,
) -> List[str]:
    """Label resonances by chaining successive FSR spacings.

    Candidates are tried in order; chains of at least ``min_chain`` members
    spaced by one candidate FSR (within ``tolerance`` of it) get the label
    'order-k' for the k-th candidate.
    """
    centers = np.asarray(centers, dtype=float)
    labels = ["unassigned"] * centers.size
    for k, fsr in enumerate(fsr_candidates, start=1):
        for start in range(centers.size):
            if labels[start] != "unassigned":
                continue
            chain = [start]
            while True:
                target = centers[chain[-1]] + fsr
                free = [j for j in range(chain[-1] + 1, centers.size) if labels[j] == "unassigned"]
                hits = [j for j in free if abs(centers[j] - target) <= tolerance * fsr]
                if not hits:
                    break
                chain.append(min(hits, key=lambda j: abs(centers[j] - target)))
            if len(chain) >= min_chain:
                for j in chain:
                    labels[j] = f"order-{k}"
    return labels


def detect_resonances(
    scan: RawScan,
    prominence: float,
    port: str = "bus",
    fsr_candidates: Sequence[float] = (),
    fsr_tolerance: float = 0.05,
    min_chain: int = 3,
) -> ResonanceTable:
    """Find dips in a normalized port, fit each with a Lorentzian and label mode orders."""
    y = scan.port(port)
    x = scan.freq
    peaks, props = find_peaks(-y, prominence=prominence, width=0)
    if peaks.size == 0:
        return ResonanceTable()
    spacing = float(np.median(np.diff(x)))
    rows = []
    for i, width in zip(peaks, props["widths"]):
        half = max(int(math.ceil(5 * width)), 5)
        lo, hi = max(0, i - half), min(x.size, i + half + 1)
        try:
            fit = fit_lorentzian(DataSeries(x[lo:hi], y[lo:hi]))
        except DetectionError as e:
            logger.debug("Skipping dip at %.6g GHz: %s", x[i], e)
            continue
        if not (fit.fwhm > 0 and fit.center > 0) or fit.depth <= 0:
            continue
        rows.append(
            Resonance(
                center_ghz=fit.center,
                kappa_ghz=fit.fwhm,
                q=fit.q,
                delta_t=fit.delta_t,
            )
        )
    rows.sort(key=lambda r: r.center_ghz)
    if fsr_candidates:
        labels = assign_mode_orders([r.center_ghz for r in rows], fsr_candidates, fsr_tolerance, min_chain)
        rows = [
            Resonance(r.center_ghz, r.kappa_ghz, r.q, r.delta_t, label) for r, label in zip(rows, labels)
        ]
    logger.debug("Detected %d resonances (grid spacing %.3g GHz)", len(rows), spacing)
    return ResonanceTable(tuple(rows))


# CSV formats


def _format(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_table(
    path,
    header: Sequence[str],
    rows: Iterable[Sequence],
    meta: Optional[Dict[str, object]] = None,
) -> None:
    """Write a CSV table to a path or an open text stream."""
    if hasattr(path, "write"):
        _write_rows(path, header, rows, meta)
        return
    with open(path, "w", encoding="utf-8", newline="") as f:
        _write_rows(f, header, rows, meta)


def _write_rows(f, header, rows, meta):
    for key, value in (meta or {}).items():
        f.write(f"# {key}: {_format(value)}\n")
    writer = csv.writer(f, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_format(v) for v in row])


def read_table(path) -> Tuple[List[str], List[List[str]], Dict[str, str]]:
    """(header, rows, metadata) of a routerkit CSV file."""
    meta: Dict[str, str] = {}
    lines = []
    try:
        with open(path, "r", encoding="utf-8", newline="") as f:
            for line in f:
                if line.startswith("#"):
                    key, sep, value = line[1:].partition(":")
                    if sep:
                        meta[key.strip()] = value.strip()
                    continue
                if line.strip():
                    lines.append(line)
    except OSError as e:
        raise InputError(f"{path}: {e}")
    rows = list(csv.reader(lines))
    if not rows:
        raise InputError(f"{path}: no header row")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    for n, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise InputError(f"{path}: row {n} has {len(row)} fields, header has {len(header)}")
    return header, body, meta


def _require_columns(path, header: List[str], required: Sequence[str]):
    missing = [c for c in required if c not in header]
    if missing:
        raise InputError(f"{path}: missing column(s) {missing}")


def _column(path, header, body, name, optional=False) -> Optional[np.ndarray]:
    if name not in header:
        if optional:
            return None
        raise InputError(f"{path}: missing column {name!r}")
    k = header.index(name)
    try:
        return np.array([float(row[k]) for row in body], dtype=float)
    except ValueError as e:
        raise InputError(f"{path}: column {name!r}: {e}")


def _meta_float(path, meta: Dict[str, str], key: str) -> Optional[float]:
    if key not in meta:
        return None
    try:
        return float(meta[key])
    except ValueError:
        raise InputError(f"{path}: metadata {key!r} is not a number")


def write_raw_scan(scan: RawScan, path) -> None:
    ports = [p for p in PORTS if getattr(scan, p) is not None]
    columns = [scan.freq] + [getattr(scan, p) for p in ports]
    write_table(path, ["freq_ghz"] + ports, zip(*columns), meta=scan.metadata)


def read_raw_scan(path) -> RawScan:
    header, body, meta = read_table(path)
    _require_columns(path, header, ["freq_ghz"])
    integration = _meta_float(path, meta, "integration_s")
    return RawScan(
        freq=_column(path, header, body, "freq_ghz"),
        drop=_column(path, header, body, "drop", optional=True),
        bus=_column(path, header, body, "bus", optional=True),
        integration_s=1.0 if integration is None else integration,
        gap_nm=_meta_float(path, meta, "gap_nm"),
        temperature_k=_meta_float(path, meta, "temperature_k"),
        power_uw=_meta_float(path, meta, "power_uw"),
    )


GAP_COLUMNS = ("gap_nm", "delta_t", "delta_t_err", "q", "q_err")


def write_gap_series(data: GapSeries, path) -> None:
    n = data.gap.size
    blank = [""] * n
    columns = [
        data.gap,
        data.delta_t,
        data.delta_t_err if data.delta_t_err is not None else blank,
        data.q,
        data.q_err if data.q_err is not None else blank,
    ]
    header = list(GAP_COLUMNS)
    if data.mode_order is not None:
        header.append("mode_order")
        columns.append(list(data.mode_order))
    write_table(path, header, zip(*columns))


def read_gap_series(path) -> GapSeries:
    header, body, _ = read_table(path)
    _require_columns(path, header, ["gap_nm", "delta_t", "q"])

    def optional_errors(name):
        if name not in header:
            return None
        k = header.index(name)
        cells = [row[k].strip() for row in body]
        if all(c == "" for c in cells):
            return None
        try:
            return np.array([float(c) for c in cells])
        except ValueError as e:
            raise InputError(f"{path}: column {name!r}: {e}")

    order = None
    if "mode_order" in header:
        k = header.index("mode_order")
        order = tuple(row[k].strip() for row in body)
    try:
        return GapSeries(
            gap=_column(path, header, body, "gap_nm"),
            delta_t=_column(path, header, body, "delta_t"),
            q=_column(path, header, body, "q"),
            delta_t_err=optional_errors("delta_t_err"),
            q_err=optional_errors("q_err"),
            mode_order=order,
        )
    except PreconditionError as e:
        raise InputError(f"{path}: {e}")


FIELD_COLUMNS = (
    "r_um", "z_um",
    "Er_re", "Er_im", "Ez_re", "Ez_im", "Ephi_re", "Ephi_im",
    "Hr_re", "Hr_im", "Hz_re", "Hz_im", "Hphi_re", "Hphi_im",
    "eps_rel", "mu_rel",
)
_FIELD_PAIRS = (("er", "Er"), ("ez", "Ez"), ("ephi", "Ephi"), ("hr", "Hr"), ("hz", "Hz"), ("hphi", "Hphi"))


def write_field_grid(grid: FieldGrid, path) -> None:
    """Row-major over (r, z)."""
    rows = []
    for i, r in enumerate(grid.r):
        for j, z in enumerate(grid.z):
            row = [r, z]
            for attr, _ in _FIELD_PAIRS:
                value = getattr(grid, attr)[i, j]
                row += [value.real, value.imag]
            row += [grid.eps[i, j], grid.mu[i, j]]
            rows.append(row)
    meta = {"n_index": grid.n_index}
    if grid.wavelength_nm is not None:
        meta["wavelength_nm"] = grid.wavelength_nm
    write_table(path, FIELD_COLUMNS, rows, meta=meta)


def read_field_grid(path) -> FieldGrid:
    header, body, meta = read_table(path)
    _require_columns(path, header, FIELD_COLUMNS)
    n_index = _meta_float(path, meta, "n_index")
    if n_index is None:
        raise InputError(f"{path}: missing '# n_index: <value>' metadata")
    cols = {name: _column(path, header, body, name) for name in FIELD_COLUMNS}
    r = np.unique(cols["r_um"])
    z = np.unique(cols["z_um"])
    if r.size * z.size != len(body):
        raise InputError(f"{path}: {len(body)} rows do not form a {r.size} x {z.size} grid")
    i = np.searchsorted(r, cols["r_um"])
    j = np.searchsorted(z, cols["z_um"])

    def gridded(values, dtype=float):
        out = np.zeros((r.size, z.size), dtype=dtype)
        out[i, j] = values
        return out

    components = {
        attr: gridded(cols[f"{prefix}_re"] + 1j * cols[f"{prefix}_im"], complex) for attr, prefix in _FIELD_PAIRS
    }
    try:
        return FieldGrid(
            r=r,
            z=z,
            eps=gridded(cols["eps_rel"]),
            mu=gridded(cols["mu_rel"]),
            n_index=n_index,
            wavelength_nm=_meta_float(path, meta, "wavelength_nm"),
            **components,
        )
    except PreconditionError as e:
        raise InputError(f"{path}: {e}")


def write_lifetime(time, counts, path) -> None:
    write_table(path, ["time_ns", "counts"], zip(time, counts))


def read_lifetime(path) -> Tuple[np.ndarray, np.ndarray]:
    header, body, _ = read_table(path)
    return _column(path, header, body, "time_ns"), _column(path, header, body, "counts")


def write_multipower(series: Sequence[PowerSeries], path) -> None:
    """Long format: one row per (power, frequency)."""
    rows = []
    for s in series:
        blank = [""] * s.freq.size
        drop = s.drop if s.drop is not None else blank
        bus = s.bus if s.bus is not None else blank
        rows.extend(zip([s.power_uw] * s.freq.size, s.freq, drop, bus))
    write_table(path, ["power_uw", "freq_ghz", "drop", "bus"], rows)


def read_multipower(path) -> List[PowerSeries]:
    header, body, _ = read_table(path)
    _require_columns(path, header, ["power_uw", "freq_ghz"])
    k_power = header.index("power_uw")
    groups: Dict[float, List[List[str]]] = {}
    try:
        for row in body:
            groups.setdefault(float(row[k_power]), []).append(row)
    except ValueError as e:
        raise InputError(f"{path}: power_uw: {e}")
    series = []
    for power, rows in groups.items():
        freq = _column(path, header, rows, "freq_ghz")
        ports = {}
        for port in PORTS:
            if port not in header:
                continue
            k = header.index(port)
            cells = [row[k].strip() for row in rows]
            if all(c == "" for c in cells):
                continue
            try:
                ports[port] = np.array([float(c) for c in cells])
            except ValueError as e:
                raise InputError(f"{path}: column {port!r}: {e}")
        try:
            series.append(PowerSeries(power_uw=power, freq=freq, **ports))
        except PreconditionError as e:
            raise InputError(f"{path}: power {power}: {e}")
    return series


def write_spectrum(drop: RealSpectrum, bus: RealSpectrum, path, meta: Optional[Dict] = None) -> None:
    write_table(path, ["detuning_ghz", "t_drop", "t_bus"], zip(drop.axis, drop.values, bus.values), meta=meta)


def read_spectrum(path) -> Tuple[RealSpectrum, RealSpectrum]:
    header, body, _ = read_table(path)
    axis = _column(path, header, body, "detuning_ghz")
    return (
        RealSpectrum(axis, _column(path, header, body, "t_drop")),
        RealSpectrum(axis, _column(path, header, body, "t_bus")),
    )


RESONANCE_COLUMNS = ("center_ghz", "kappa_ghz", "q", "delta_t", "mode_order")


def write_resonance_table(table: ResonanceTable, path) -> None:
    rows = [(r.center_ghz, r.kappa_ghz, r.q, r.delta_t, r.mode_order) for r in table]
    write_table(path, RESONANCE_COLUMNS, rows)


def read_resonance_table(path) -> ResonanceTable:
    header, body, _ = read_table(path)
    _require_columns(path, header, RESONANCE_COLUMNS)
    k = {name: header.index(name) for name in RESONANCE_COLUMNS}
    try:
        rows = [
            Resonance(
                center_ghz=float(row[k["center_ghz"]]),
                kappa_ghz=float(row[k["kappa_ghz"]]),
                q=float(row[k["q"]]),
                delta_t=float(row[k["delta_t"]]),
                mode_order=row[k["mode_order"]],
            )
            for row in body
        ]
    except ValueError as e:
        raise InputError(f"{path}: {e}")
    return ResonanceTable(tuple(rows))
