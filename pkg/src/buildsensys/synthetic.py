"""Seeded synthetic building and traffic data.

Random numbers come from a counter-based generator so that any
implementation can reproduce the streams exactly:

    mix(z)      = SplitMix64 finaliser:
                  z ^= z >> 30; z *= 0xBF58476D1CE4E5B9
                  z ^= z >> 27; z *= 0x94D049BB133111EB
                  z ^= z >> 31                      (all mod 2**64)
    key(s, k)   = mix(s ^ mix(k + 0x9E3779B97F4A7C15))
    bits(s,k,i) = mix(key(s, k) + (i + 1) * 0x9E3779B97F4A7C15)
    uniform     = ((bits >> 11) + 0.5) / 2**53       in (0, 1)
    normal(i)   = sqrt(-2 ln u(2i)) * cos(2 pi u(2i + 1))

``s`` is the seed, ``k`` a fixed stream id per random quantity (see
``_STREAMS``) and ``i`` the draw index.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import ndtr

from .dataset import Channel, TimeSeriesFrame
from .errors import ConfigError

_M64 = 0xFFFFFFFFFFFFFFFF
_GOLDEN = 0x9E3779B97F4A7C15
START_EPOCH = 1514764800  # 2018-01-01T00:00Z, a Monday

_STREAMS = {
    "attendance": 1,
    "event": 2,
    "shift_in": 3,
    "shift_out": 4,
    "occ_noise": 5,
    "traffic_noise": 6,
    "co2_noise": 7,
    "aqi_noise": 8,
    "temp_day": 9,
    "temp_noise": 10,
    "rain_event": 11,
    "rain_amount": 12,
    "env_noise": 13,
}
ROAD_STREAM_STRIDE = 100

ENV_NAMES = ("co2", "aqi", "temp", "rain", "humidity", "o2", "indoor_temp", "air_pollution")


def _mix64(z: np.ndarray) -> np.ndarray:
    z = z ^ (z >> np.uint64(30))
    z = z * np.uint64(0xBF58476D1CE4E5B9)
    z = z ^ (z >> np.uint64(27))
    z = z * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def random_bits(seed: int, stream: int, n: int, offset: int = 0) -> np.ndarray:
    """``n`` 64-bit draws of a stream, starting at counter ``offset``."""
    with np.errstate(over="ignore"):
        k = _mix64(np.array([(stream + _GOLDEN) & _M64], dtype=np.uint64))
        key = _mix64(np.array([seed & _M64], dtype=np.uint64) ^ k)
        i = np.arange(offset + 1, offset + n + 1, dtype=np.uint64)
        return _mix64(key + i * np.uint64(_GOLDEN))


def uniform(seed: int, stream: int, n: int) -> np.ndarray:
    b = random_bits(seed, stream, n)
    return ((b >> np.uint64(11)).astype(np.float64) + 0.5) / 2.0**53


def normal(seed: int, stream: int, n: int) -> np.ndarray:
    u = uniform(seed, stream, 2 * n)
    return np.sqrt(-2.0 * np.log(u[0::2])) * np.cos(2.0 * np.pi * u[1::2])


@dataclass(frozen=True)
class GenConfig:
    days: int = 365
    zones: int = 3
    env_channels: int = 5
    coupling: float = 0.9
    lag_hours: int = 0
    noise_std: float = 0.05
    seed: int = 42
    base_volume: float = 600.0
    road_index: int = 0

    def __post_init__(self):
        if self.days < 1:
            raise ConfigError(f"days must be >= 1, got {self.days}")
        if self.zones < 1:
            raise ConfigError(f"zones must be >= 1, got {self.zones}")
        if self.env_channels < 0:
            raise ConfigError(f"env_channels must be >= 0, got {self.env_channels}")
        if not 0.0 <= self.coupling <= 1.0:
            raise ConfigError(f"coupling must lie in [0, 1], got {self.coupling}")
        if self.noise_std < 0:
            raise ConfigError(f"noise_std must be >= 0, got {self.noise_std}")
        if self.lag_hours < 0:
            raise ConfigError(f"lag_hours must be >= 0, got {self.lag_hours}")
        if self.base_volume <= 0:
            raise ConfigError("base_volume must be positive")


def _gauss(x, c, w):
    return np.exp(-0.5 * ((x - c) / w) ** 2)


def occupancy_profile(cfg: GenConfig):
    """Hourly commuting flow, presence and per-zone occupancy.

    Each weekday has a random attendance level and jittered arrival and
    departure times; weekends hold a flat, low headcount with no commuting
    peaks. Arrivals and departures are Gaussian bumps, presence is the gap
    between their cumulative curves. Zones blend presence with movement,
    from an even mix in the first zone down to pure movement (a lobby) in the
    last, so the summed weekday count shows the morning and evening peaks.
    """
    D = cfg.days
    day = np.arange(D)
    weekday = (day % 7) < 5
    s = cfg.seed
    attend = np.clip(1.0 + 0.2 * normal(s, _STREAMS["attendance"], D), 0.4, 1.6)
    event = uniform(s, _STREAMS["event"], D) < 0.05
    attend = np.where(event, 0.35 * attend, attend)
    attend = np.where(weekday, attend, 0.15 * attend)
    c_in = 9.0 + np.clip(0.6 * normal(s, _STREAMS["shift_in"], D), -1.5, 1.5)
    c_out = 17.0 + np.clip(0.6 * normal(s, _STREAMS["shift_out"], D), -1.5, 1.5)
    width = 1.2

    hour = np.tile(np.arange(24, dtype=np.float64), D)
    d_of = np.repeat(day, 24)
    a, ci, co = attend[d_of], c_in[d_of], c_out[d_of]
    wd = weekday[d_of]
    inflow = np.where(wd, a * _gauss(hour, ci, width), 0.0)
    outflow = np.where(wd, a * _gauss(hour, co, width), 0.0)
    workday = a * np.clip(ndtr((hour - ci) / width) - ndtr((hour - co) / width), 0.0, None)
    presence = np.where(wd, workday, 0.8 * a)
    flow = inflow + outflow

    Z = cfg.zones
    mix = np.linspace(0.5, 0.0, Z) if Z > 1 else np.array([0.25])
    cap = 400.0 / np.arange(1, Z + 1)
    noise = normal(s, _STREAMS["occ_noise"], D * 24 * Z).reshape(D * 24, Z)
    sd = 0.5 * cfg.noise_std
    occ = cap * (mix * presence[:, None] + (1.0 - mix) * 2.0 * flow[:, None]) + 0.02 * cap
    occ = occ * np.exp(sd * noise - 0.5 * sd * sd)
    return flow, presence, occ


def _traffic(cfg: GenConfig, flow: np.ndarray, hour: np.ndarray, weekday_h: np.ndarray) -> np.ndarray:
    base = cfg.base_volume * (0.25 + 0.75 * _gauss(hour, 13.0, 4.5))
    base = np.where(weekday_h, base, 0.8 * base)
    lagged = np.concatenate([np.full(cfg.lag_hours, flow[0]), flow])[: flow.size]
    traffic = base + cfg.coupling * 1.8 * cfg.base_volume * lagged
    stream = _STREAMS["traffic_noise"] + ROAD_STREAM_STRIDE * cfg.road_index
    z = normal(cfg.seed, stream, flow.size)
    sd = cfg.noise_std
    return traffic * np.exp(sd * z - 0.5 * sd * sd)


def _environment(cfg: GenConfig, presence, traffic, hour, n):
    s = cfg.seed
    road = ROAD_STREAM_STRIDE * cfg.road_index
    D = cfg.days
    lagged_presence = np.concatenate([[presence[0]], presence[:-1]])
    temp = (
        20.0
        + 5.0 * np.sin(2.0 * np.pi * (hour - 9.0) / 24.0)
        + np.repeat(2.0 * normal(s, _STREAMS["temp_day"], D), 24)
        + 0.3 * normal(s, _STREAMS["temp_noise"], n)
    )
    rain_on = uniform(s, _STREAMS["rain_event"], n) < 0.04
    rain = np.where(rain_on, -2.0 * np.log(uniform(s, _STREAMS["rain_amount"], n)), 0.0)
    tnorm = traffic / cfg.base_volume
    series = {
        "co2": 420.0 + 600.0 * lagged_presence + 15.0 * normal(s, _STREAMS["co2_noise"], n),
        "aqi": np.maximum(1.0, 60.0 - 12.0 * tnorm + 4.0 * normal(s, _STREAMS["aqi_noise"] + road, n)),
        "temp": temp,
        "rain": rain,
    }
    extra = normal(s, _STREAMS["env_noise"], n * 8).reshape(8, n)
    series["humidity"] = 60.0 - 1.5 * (temp - 20.0) + 3.0 * extra[0]
    series["o2"] = 20.9 - 0.1 * presence + 0.02 * extra[1]
    series["indoor_temp"] = 22.0 + 1.0 * presence + 0.2 * extra[2]
    series["air_pollution"] = 10.0 + 5.0 * presence + extra[3]
    names, cols = [], []
    for k in range(cfg.env_channels):
        if k < len(ENV_NAMES):
            name = ENV_NAMES[k]
            col = series[name]
        else:
            name = f"aux{k + 1}"
            col = 10.0 + normal(s, _STREAMS["env_noise"] + 1000 + k, n)
        names.append(name)
        cols.append(col)
    return names, cols


def generate(config: GenConfig) -> TimeSeriesFrame:
    """Hourly frame of ``config.days * 24`` rows starting 2018-01-01T00:00Z."""
    flow, presence, occ = occupancy_profile(config)
    n = config.days * 24
    hour = np.tile(np.arange(24, dtype=np.float64), config.days)
    weekday_h = np.repeat((np.arange(config.days) % 7) < 5, 24)
    traffic = _traffic(config, flow, hour, weekday_h)
    env_names, env_cols = _environment(config, presence, traffic, hour, n)
    meta = [Channel(f"zone{j + 1}", "occupancy") for j in range(config.zones)]
    meta += [Channel(name, "environmental") for name in env_names]
    channels = np.column_stack([occ] + env_cols) if env_cols else occ
    return TimeSeriesFrame(
        timestamps=START_EPOCH + 3600 * np.arange(n, dtype=np.int64),
        channels=channels,
        channel_meta=tuple(meta),
        traffic=traffic,
        meta={"generator": {k: v for k, v in config.__dict__.items()}},
    )


ROADS = (
    ("road-a", 0.9, 0, 600.0),
    ("road-b", 0.7, 1, 900.0),
    ("road-c", 0.5, 0, 450.0),
    ("road-d", 0.3, 2, 700.0),
)


def benchmark_suite(seed: int = 42, days: int = 365, zones: int = 3, env_channels: int = 5,
                    noise_std: float = 0.05) -> dict[str, TimeSeriesFrame]:
    """Four roads sharing one building, with coupling decreasing from a to d."""
    base = GenConfig(days=days, zones=zones, env_channels=env_channels, noise_std=noise_std, seed=seed)
    out = {}
    for idx, (name, coupling, lag, volume) in enumerate(ROADS):
        cfg = replace(base, coupling=coupling, lag_hours=lag, base_volume=volume, road_index=idx)
        frame = generate(cfg)
        out[name] = replace(frame, meta={**frame.meta, "road": name})
    return out


def frame_digest(frame: TimeSeriesFrame) -> str:
    h = hashlib.sha256()
    for arr in (frame.timestamps, frame.channels, frame.traffic):
        h.update(np.ascontiguousarray(arr).tobytes())
    h.update("|".join(frame.names).encode())
    return h.hexdigest()
