"""Synthetic 44-bus feeder and its hourly P/Q load dataset.

Building-simulation base profiles are replaced by a parametric model: a
24-hour shape, a day-of-week multiplier, a yearly cosine season and
multiplicative Gaussian noise. Each node's series is then rescaled so its
mean hourly draw matches the per-household (37 kWh/day) or per-floor-area
(22.5 kWh/ft^2/yr) consumption targets.
"""
from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

NUM_NODES = 44
NUM_EDGES = 42
HOURS_PER_YEAR = 8760
DAYS_PER_YEAR = 365
RESIDENTIAL_KWH_PER_DAY = 37.0
COMMERCIAL_KWH_PER_SQFT_YEAR = 22.5
GENERATOR_VERSION = "1.0"
START_DATE = np.datetime64("2019-01-01")
# dataset values are stored at 0.1 W resolution so CSV text round-trips exactly
VALUE_DECIMALS = 4


class LoadClass(str, enum.Enum):
    RESIDENTIAL = "residential"
    HOSPITAL = "hospital"
    RESTAURANT = "restaurant"
    RETAIL = "retail"
    HOTEL = "hotel"
    OFFICE = "office"

    @property
    def is_residential(self) -> bool:
        return self is LoadClass.RESIDENTIAL


COMMERCIAL_CLASSES = [c for c in LoadClass if not c.is_residential]


@dataclass(frozen=True)
class Node:
    id: int
    load_class: LoadClass
    size: float  # households (residential) or floor area in ft^2 (commercial)

    def to_dict(self) -> dict:
        size = int(self.size) if self.load_class.is_residential else round(self.size, 3)
        return {"id": self.id, "class": self.load_class.value, "size": size}


@dataclass(frozen=True)
class DistributionNetwork:
    nodes: tuple[Node, ...]
    edges: tuple[tuple[int, int], ...]
    roots: tuple[int, ...] = (0, 22)

    def to_json(self) -> str:
        doc = {"nodes": [n.to_dict() for n in self.nodes], "edges": [list(e) for e in self.edges]}
        return json.dumps(doc, sort_keys=True)

    def hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "DistributionNetwork":
        doc = json.loads(Path(path).read_text())
        nodes = tuple(Node(d["id"], LoadClass(d["class"]), float(d["size"])) for d in doc["nodes"])
        edges = tuple(tuple(e) for e in doc["edges"])
        return cls(nodes, edges)


def count_components(n: int, edges) -> int:
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b in edges:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
    return len({find(i) for i in range(n)})


def build_network(seed: int = 0) -> DistributionNetwork:
    """Two radial feeders of 22 buses each, ~70/30 residential/commercial."""
    rng = np.random.default_rng(seed)
    half = NUM_NODES // 2
    edges = []
    for root in (0, half):
        for k in range(1, half):
            child = root + k
            # attach to one of the last few buses so laterals stay long and radial
            lo = max(0, k - 4)
            parent = root + int(rng.integers(lo, k))
            edges.append((parent, child))

    n_commercial = round(0.3 * NUM_NODES)
    classes = [LoadClass.RESIDENTIAL] * (NUM_NODES - n_commercial)
    classes += [COMMERCIAL_CLASSES[i % len(COMMERCIAL_CLASSES)] for i in range(n_commercial)]
    order = rng.permutation(NUM_NODES)
    nodes = []
    for node_id in range(NUM_NODES):
        cls = classes[order[node_id]]
        if cls.is_residential:
            size = float(rng.integers(50, 401))
        else:
            size = float(math.exp(rng.uniform(math.log(20_000), math.log(500_000))))
        nodes.append(Node(node_id, cls, size))
    return DistributionNetwork(tuple(nodes), tuple(edges))


# load profiles

def _bumps(base: float, peaks) -> np.ndarray:
    hours = np.arange(24)
    shape = np.full(24, base)
    for centre, width, height in peaks:
        d = np.minimum(np.abs(hours - centre), 24 - np.abs(hours - centre))
        shape += height * np.exp(-0.5 * (d / width) ** 2)
    return shape / shape.sum()


def _plateau(base: float, start: int, end: int, height: float) -> np.ndarray:
    hours = np.arange(24)
    ramp = 1 / (1 + np.exp(-(hours - start + 0.5) * 2)) - 1 / (1 + np.exp(-(hours - end + 0.5) * 2))
    shape = base + height * ramp
    return shape / shape.sum()


@dataclass(frozen=True)
class LoadProfileSpec:
    load_class: LoadClass
    base_daily_shape: tuple[float, ...]
    weekly_factor: tuple[float, ...] = (1.0,) * 7  # Monday first
    seasonal_amplitude: float = 0.0
    noise_std: float = 0.0
    power_factor: float = 1.0
    peak_day: int = 200

    def __post_init__(self):
        shape = np.asarray(self.base_daily_shape, dtype=float)
        if shape.shape != (24,) or (shape < 0).any() or not math.isclose(shape.sum(), 1.0, abs_tol=1e-9):
            raise ValueError("base_daily_shape must be 24 nonnegative weights summing to 1")
        if len(self.weekly_factor) != 7 or min(self.weekly_factor) <= 0:
            raise ValueError("weekly_factor must be 7 positive multipliers")
        if not 0.7 < self.power_factor <= 1.0:
            raise ValueError(f"power_factor {self.power_factor} outside (0.7, 1.0]")
        if self.noise_std < 0 or not 0 <= self.seasonal_amplitude < 1:
            raise ValueError("noise_std must be >= 0 and seasonal_amplitude in [0, 1)")


_WEEKDAY = (1.0, 1.0, 1.0, 1.0, 1.0, 0.55, 0.45)

DEFAULT_PROFILES: dict[LoadClass, LoadProfileSpec] = {
    LoadClass.RESIDENTIAL: LoadProfileSpec(
        LoadClass.RESIDENTIAL,
        tuple(_bumps(0.6, [(7.5, 1.5, 0.5), (19.5, 2.5, 1.2)])),
        (0.97, 0.97, 0.97, 0.98, 1.0, 1.06, 1.05),
        seasonal_amplitude=0.30,
        noise_std=0.04,
        power_factor=0.95,
    ),
    LoadClass.HOSPITAL: LoadProfileSpec(
        LoadClass.HOSPITAL,
        tuple(_bumps(1.0, [(13.0, 4.0, 0.25)])),
        (1.0, 1.0, 1.0, 1.0, 1.0, 0.95, 0.94),
        seasonal_amplitude=0.15,
        noise_std=0.02,
        power_factor=0.90,
    ),
    LoadClass.RESTAURANT: LoadProfileSpec(
        LoadClass.RESTAURANT,
        tuple(_bumps(0.25, [(12.0, 1.3, 1.0), (18.5, 1.7, 1.3)])),
        (0.9, 0.92, 0.95, 1.0, 1.15, 1.2, 1.05),
        seasonal_amplitude=0.20,
        noise_std=0.04,
        power_factor=0.90,
    ),
    LoadClass.RETAIL: LoadProfileSpec(
        LoadClass.RETAIL,
        tuple(_plateau(0.3, 10, 21, 1.0)),
        (0.95, 0.95, 0.95, 1.0, 1.05, 1.15, 0.9),
        seasonal_amplitude=0.20,
        noise_std=0.03,
        power_factor=0.90,
    ),
    LoadClass.HOTEL: LoadProfileSpec(
        LoadClass.HOTEL,
        tuple(_bumps(0.7, [(7.0, 1.5, 0.6), (20.0, 2.0, 0.8)])),
        (0.95, 0.95, 0.97, 1.0, 1.08, 1.1, 1.0),
        seasonal_amplitude=0.20,
        noise_std=0.03,
        power_factor=0.90,
    ),
    LoadClass.OFFICE: LoadProfileSpec(
        LoadClass.OFFICE,
        tuple(_plateau(0.25, 9, 17, 1.0)),
        _WEEKDAY,
        seasonal_amplitude=0.25,
        noise_std=0.03,
        power_factor=0.90,
    ),
}


def _calendar(hours: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-hour (day-of-year, day-of-week, timestamp) on a 365-day calendar.

    February 29th is skipped, so ``years * 8760`` hours tile whole years.
    """
    n_days = hours // 24
    years = -(-n_days // DAYS_PER_YEAR)
    days = START_DATE + np.arange(years * 366 + 1)
    months = days.astype("datetime64[M]").astype(int) % 12 + 1
    dom = (days - days.astype("datetime64[M]")).astype(int) + 1
    days = days[~((months == 2) & (dom == 29))][:n_days]
    # numpy weeks start on Thursday 1970-01-01
    dow = (days.astype(int) + 3) % 7
    day_of_year = np.arange(n_days) % DAYS_PER_YEAR
    stamps = days.astype("datetime64[h]")[:, None] + np.arange(24).astype("timedelta64[h]")
    return np.repeat(day_of_year, 24), np.repeat(dow, 24), stamps.reshape(-1)


def _check_hours(hours: int) -> None:
    if hours not in (HOURS_PER_YEAR, 5 * HOURS_PER_YEAR):
        raise ValueError(f"hours must be 8760 or 43800, got {hours}")


def synthesize_base_profile(spec: LoadProfileSpec, hours: int, seed, *, hour_shift: int = 0) -> np.ndarray:
    """Hourly series shape * weekday * season * (1 + clipped noise), >= 0."""
    _check_hours(hours)
    rng = np.random.default_rng(seed)
    day_of_year, dow, _ = _calendar(hours)
    shape = np.roll(np.asarray(spec.base_daily_shape), hour_shift)
    hour = np.arange(hours) % 24
    season = 1.0 + spec.seasonal_amplitude * np.cos(2 * np.pi * (day_of_year - spec.peak_day) / DAYS_PER_YEAR)
    eps = rng.normal(0.0, 1.0, size=hours) * spec.noise_std
    eps = np.clip(eps, -3 * spec.noise_std, 3 * spec.noise_std)
    series = shape[hour] * np.asarray(spec.weekly_factor)[dow] * season * (1.0 + eps)
    return np.maximum(series, 0.0)


def node_target_kw(node: Node) -> float:
    if node.size <= 0:
        kind = "household_count" if node.load_class.is_residential else "floor_area"
        raise ValueError(f"node {node.id}: {kind} must be positive, got {node.size}")
    if node.load_class.is_residential:
        return node.size * RESIDENTIAL_KWH_PER_DAY / 24.0
    return node.size * COMMERCIAL_KWH_PER_SQFT_YEAR / HOURS_PER_YEAR


def scale_to_node(node: Node, base_series: np.ndarray) -> np.ndarray:
    """Rescale so the mean hourly power hits the node's consumption target."""
    target = node_target_kw(node)
    m = float(np.mean(base_series))
    if m <= 0:
        raise ValueError("base series has nonpositive mean")
    return base_series * (target / m)


def derive_reactive(P: np.ndarray, power_factor: float) -> np.ndarray:
    """Lagging reactive power Q = P tan(arccos pf)."""
    if not 0.7 < power_factor <= 1.0:
        raise ValueError(f"power_factor {power_factor} outside (0.7, 1.0]")
    return np.asarray(P, dtype=float) * math.tan(math.acos(power_factor))


def node_profile(node: Node, noise_std: float | None = None) -> tuple[LoadProfileSpec, int]:
    spec = DEFAULT_PROFILES[node.load_class]
    if noise_std is not None:
        spec = replace(spec, noise_std=noise_std)
    # small per-bus phase offset so same-class buses are not clones
    return spec, (node.id % 3) - 1


@dataclass
class LoadDataset:
    matrix: np.ndarray  # [T, 88]: P_0..P_43, Q_0..Q_43 in kW / kvar
    timestamps: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def num_nodes(self) -> int:
        return self.matrix.shape[1] // 2

    def columns(self) -> list[str]:
        n = self.num_nodes
        return [f"P_{i}" for i in range(n)] + [f"Q_{i}" for i in range(n)]

    def to_csv(self, path) -> None:
        frame = pd.DataFrame(self.matrix, columns=self.columns())
        frame.insert(0, "timestamp", np.datetime_as_string(self.timestamps, unit="s"))
        frame.to_csv(path, index=False, float_format=f"%.{VALUE_DECIMALS}f", lineterminator="\n")

    def save(self, path) -> Path:
        path = Path(path)
        self.to_csv(path)
        meta_path = path.with_suffix(".json")
        meta_path.write_text(json.dumps(self.meta, indent=2, sort_keys=True) + "\n")
        return meta_path

    @classmethod
    def load(cls, path) -> "LoadDataset":
        path = Path(path)
        frame = pd.read_csv(path, float_precision="round_trip")
        stamps = frame.pop("timestamp").to_numpy().astype("datetime64[h]")
        meta_path = path.with_suffix(".json")
        meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        return cls(frame.to_numpy(dtype=np.float64), stamps, meta)


def generate_dataset(network: DistributionNetwork, years: int, seed: int = 0, *, noise_std: float | None = None) -> LoadDataset:
    if years not in (1, 5):
        raise ValueError(f"years must be 1 or 5, got {years}")
    hours = years * HOURS_PER_YEAR
    n = len(network.nodes)
    matrix = np.empty((hours, 2 * n))
    seeds = np.random.SeedSequence(seed).spawn(n)
    for node in network.nodes:
        spec, shift = node_profile(node, noise_std)
        base = synthesize_base_profile(spec, hours, seeds[node.id], hour_shift=shift)
        P = scale_to_node(node, base)
        matrix[:, node.id] = P
        matrix[:, n + node.id] = derive_reactive(P, spec.power_factor)
    matrix = np.round(matrix, VALUE_DECIMALS)
    _, _, stamps = _calendar(hours)
    meta = {
        "seed": seed,
        "years": years,
        "network_hash": network.hash(),
        "generator_version": GENERATOR_VERSION,
        "noise_std": noise_std,
    }
    return LoadDataset(matrix, stamps, meta)


@dataclass
class WindowedSamples:
    inputs: np.ndarray  # [S, lookback, 88]
    targets: np.ndarray  # [S, horizon * 88]
    lookback: int
    horizon: int = 1

    def __len__(self) -> int:
        return self.inputs.shape[0]


def window(dataset, lookback: int = 24, horizon: int = 1) -> WindowedSamples:
    """Sliding windows: inputs[i] = rows i..i+lookback-1, target = the next row(s)."""
    matrix = dataset.matrix if isinstance(dataset, LoadDataset) else np.asarray(dataset)
    T = matrix.shape[0]
    if lookback < 1 or horizon < 1:
        raise ValueError("lookback and horizon must be >= 1")
    if T < lookback + horizon:
        raise ValueError(f"dataset has {T} rows, needs at least {lookback + horizon}")
    S = T - lookback - horizon + 1
    view = np.lib.stride_tricks.sliding_window_view(matrix, lookback, axis=0)
    # read-only strided view; batches are gathered on demand
    inputs = np.swapaxes(view[:S], 1, 2)
    targets = np.stack([matrix[lookback + k: lookback + k + S] for k in range(horizon)], axis=1).reshape(S, -1)
    return WindowedSamples(inputs, targets, lookback, horizon)
