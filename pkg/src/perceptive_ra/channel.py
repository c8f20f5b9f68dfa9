"""Scenario types, array geometry and link-budget helpers.

Every object served by the base station is described by an :class:`ObjectSpec`.
Objects are always ordered sensing targets, then ISAC users, then communication
users; the index helpers on :class:`ScenarioConfig` rely on that ordering.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

SPEED_OF_LIGHT = 299792458.0


class DomainError(ValueError):
    """An input lies outside the domain of a physical formula."""


class Role(str, enum.Enum):
    SENSING = "SensingTarget"
    ISAC = "IsacUser"
    COMM = "CommUser"

    @property
    def senses(self):
        return self is not Role.COMM

    @property
    def communicates(self):
        return self is not Role.SENSING


_ROLE_ORDER = {Role.SENSING: 0, Role.ISAC: 1, Role.COMM: 2}


@dataclass(frozen=True)
class ArrayConfig:
    n_tx: int = 32
    n_rx: int = 32
    n_user_rx: int = 1

    def __post_init__(self):
        for name in ("n_tx", "n_rx", "n_user_rx"):
            if int(getattr(self, name)) < 1:
                raise DomainError(f"array.{name} must be >= 1")

    @property
    def kappa2(self):
        """Radar array gain factor N_t * N_r."""
        return self.n_tx * self.n_rx

    @property
    def user_kappa2(self):
        return self.n_tx * self.n_user_rx


@dataclass(frozen=True)
class MotionInit:
    """Initial Cartesian state [x, y, vx, vy] and process-noise intensity."""

    x_m: float
    y_m: float
    vx_mps: float
    vy_mps: float
    process_noise: float = 1.0

    def __post_init__(self):
        if self.process_noise < 0:
            raise DomainError("motion.process_noise must be >= 0")

    def as_array(self):
        return np.array([self.x_m, self.y_m, self.vx_mps, self.vy_mps], dtype=float)


@dataclass(frozen=True)
class ObjectSpec:
    role: Role
    distance_m: float
    angle_deg: float
    rcs_m2: float | None = None
    importance: float = 1.0
    beam_gain: tuple[float, float] = (1.0, 1.0)
    motion: MotionInit | None = None
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "role", Role(self.role))
        object.__setattr__(self, "beam_gain", tuple(float(e) for e in self.beam_gain))
        if not self.distance_m > 0:
            raise DomainError(f"{self.name or 'object'}: distance_m must be > 0")
        if not -180.0 < self.angle_deg <= 180.0:
            raise DomainError(f"{self.name or 'object'}: angle_deg must lie in (-180, 180]")
        if not self.importance > 0:
            raise DomainError(f"{self.name or 'object'}: importance must be > 0")
        if self.role.senses and not (self.rcs_m2 is not None and self.rcs_m2 > 0):
            raise DomainError(f"{self.name or 'object'}: sensing roles need rcs_m2 > 0")
        if len(self.beam_gain) != 2 or not all(0.0 <= e <= 1.0 for e in self.beam_gain):
            raise DomainError(f"{self.name or 'object'}: beam_gain must be two values in [0, 1]")


@dataclass(frozen=True)
class ScenarioConfig:
    """Complete description of one resource-allocation experiment.

    ``sigma_r2_w`` is the radar receiver noise power per antenna; ``None`` means
    noise PSD times the total bandwidth. ``comm_array_gain`` toggles the
    N_t * N_user_rx factor in the normalised communication gain. ``crb`` and
    ``tracking`` carry optional keyword overrides for the estimation-bound and
    closed-loop tracking models.
    """

    objects: tuple[ObjectSpec, ...]
    array: ArrayConfig = field(default_factory=ArrayConfig)
    carrier_hz: float = 30e9
    noise_psd_dbm_hz: float = -162.0
    p_total_w: float = 40.0
    b_total_hz: float = 100e6
    p_box: tuple[float, float] = (4.0, 32.0)
    b_box: tuple[float, float] = (10e6, 80e6)
    sigma_r2_w: float | None = None
    comm_array_gain: bool = True
    name: str = ""
    crb: dict | None = None
    tracking: dict | None = None

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(self, "p_box", tuple(float(v) for v in self.p_box))
        object.__setattr__(self, "b_box", tuple(float(v) for v in self.b_box))
        if not self.objects:
            raise DomainError("objects: at least one object is required")
        ranks = [_ROLE_ORDER[o.role] for o in self.objects]
        if ranks != sorted(ranks):
            raise DomainError("objects: must be ordered sensing targets, ISAC users, comm users")
        if not self.carrier_hz > 0:
            raise DomainError("carrier_hz must be > 0")
        m = len(self.objects)
        for label, total, (lo, hi) in (
            ("p", self.p_total_w, self.p_box),
            ("b", self.b_total_hz, self.b_box),
        ):
            if not 0 < lo < hi:
                raise DomainError(f"{label}_box: need 0 < min < max")
            if not lo * m <= total <= hi * m:
                raise DomainError(
                    f"{label}_box: box-simplex infeasible, need {label}_min*M <= "
                    f"{label}_total <= {label}_max*M (M={m})"
                )
        if self.sigma_r2_w is not None and not self.sigma_r2_w > 0:
            raise DomainError("sigma_r2_w must be > 0")

    @property
    def n_objects(self):
        return len(self.objects)

    @property
    def sensing_idx(self):
        return np.array([i for i, o in enumerate(self.objects) if o.role.senses], dtype=int)

    @property
    def comm_idx(self):
        return np.array([i for i, o in enumerate(self.objects) if o.role.communicates], dtype=int)

    @property
    def beam_gain_eps(self):
        return [o.beam_gain for o in self.objects if o.role.senses]

    @property
    def wavelength_m(self):
        return SPEED_OF_LIGHT / self.carrier_hz

    @property
    def noise_psd_w_hz(self):
        return 10.0 ** ((self.noise_psd_dbm_hz - 30.0) / 10.0)

    @property
    def radar_noise_w(self):
        if self.sigma_r2_w is not None:
            return self.sigma_r2_w
        return self.noise_psd_w_hz * self.b_total_hz

    def object_names(self):
        return [o.name or f"obj{i + 1}" for i, o in enumerate(self.objects)]

    def uniform_allocation(self):
        m = self.n_objects
        return Allocation(
            np.full(m, self.p_total_w / m), np.full(m, self.b_total_hz / m),
            self.p_total_w, self.b_total_hz,
        )


@dataclass(frozen=True)
class ChannelGains:
    """Normalised gains: sensing (1/W) per sensing object, comm (Hz/W) per comm object."""

    sensing_gain: np.ndarray
    comm_gain: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "sensing_gain", np.asarray(self.sensing_gain, dtype=float))
        object.__setattr__(self, "comm_gain", np.asarray(self.comm_gain, dtype=float))


@dataclass(frozen=True)
class Allocation:
    power_w: np.ndarray
    bandwidth_hz: np.ndarray
    p_total_w: float
    b_total_hz: float

    def __post_init__(self):
        object.__setattr__(self, "power_w", np.asarray(self.power_w, dtype=float))
        object.__setattr__(self, "bandwidth_hz", np.asarray(self.bandwidth_hz, dtype=float))

    def violation(self, scenario):
        """Largest relative violation of the budget and box constraints."""
        p, b = self.power_w, self.bandwidth_hz
        (pl, ph), (bl, bh) = scenario.p_box, scenario.b_box
        return max(
            abs(p.sum() - self.p_total_w) / self.p_total_w,
            abs(b.sum() - self.b_total_hz) / self.b_total_hz,
            float(np.max(np.maximum(pl - p, p - ph))) / ph,
            float(np.max(np.maximum(bl - b, b - bh))) / bh,
            0.0,
        )


def steering_vector(theta_deg, n):
    """Half-wavelength ULA steering vector with unit norm."""
    if int(n) < 1:
        raise DomainError("antenna count must be >= 1")
    k = np.arange(int(n))
    return np.exp(1j * np.pi * k * np.sin(np.deg2rad(theta_deg))) / np.sqrt(n)


def beam_gain(theta_true, theta_hat, n):
    """Magnitude of the inner product between two steering vectors."""
    if np.sin(np.deg2rad(theta_true)) == np.sin(np.deg2rad(theta_hat)):
        if int(n) < 1:
            raise DomainError("antenna count must be >= 1")
        return 1.0
    g = abs(np.vdot(steering_vector(theta_true, n), steering_vector(theta_hat, n)))
    return min(float(g), 1.0)


def _require_positive(**kwargs):
    for name, v in kwargs.items():
        if not np.all(np.asarray(v) > 0):
            raise DomainError(f"{name} must be > 0")


def radar_pathloss_var(distance_m, rcs_m2, carrier_hz):
    """Reflection-coefficient variance from the monostatic radar equation."""
    _require_positive(distance_m=distance_m, rcs_m2=rcs_m2, carrier_hz=carrier_hz)
    lam = SPEED_OF_LIGHT / carrier_hz
    return rcs_m2 * lam**2 / ((4 * np.pi) ** 3 * np.asarray(distance_m, dtype=float) ** 4)


def comm_pathloss_db(distance_m, carrier_ghz):
    """Free-space style loss 32.4 + 20 log10(d [m]) + 20 log10(f [GHz])."""
    _require_positive(distance_m=distance_m, carrier_ghz=carrier_ghz)
    return 32.4 + 20 * np.log10(distance_m) + 20 * np.log10(carrier_ghz)


def sensing_gain_at(scenario, distance_m, rcs_m2, eps=(1.0, 1.0)):
    """Normalised sensing gain for an arbitrary range (vectorised in distance)."""
    var = radar_pathloss_var(distance_m, rcs_m2, scenario.carrier_hz)
    kappa4 = float(scenario.array.kappa2) ** 2
    e, et = eps
    return var * kappa4 * e**2 * et**2 / (scenario.array.n_rx * scenario.radar_noise_w)


def sensing_channel_gain(spec, scenario):
    if not spec.role.senses:
        raise DomainError("sensing_channel_gain needs a sensing-capable object")
    return float(sensing_gain_at(scenario, spec.distance_m, spec.rcs_m2, spec.beam_gain))


def comm_gain_at(scenario, distance_m):
    loss_db = comm_pathloss_db(distance_m, scenario.carrier_hz / 1e9)
    kappa2 = scenario.array.user_kappa2 if scenario.comm_array_gain else 1.0
    return kappa2 * 10.0 ** (-loss_db / 10.0) / scenario.noise_psd_w_hz


def comm_channel_gain(spec, scenario):
    if not spec.role.communicates:
        raise DomainError("comm_channel_gain needs a comm-capable object")
    return float(comm_gain_at(scenario, spec.distance_m))


def channel_gains(scenario):
    objs = scenario.objects
    return ChannelGains(
        [sensing_channel_gain(objs[i], scenario) for i in scenario.sensing_idx],
        [comm_channel_gain(objs[i], scenario) for i in scenario.comm_idx],
    )


def rate_terms(power, bandwidth, gain):
    """Per-user b * log2(1 + p g / b), with the b -> 0 limit taken as 0."""
    p = np.asarray(power, dtype=float)
    b = np.asarray(bandwidth, dtype=float)
    g = np.asarray(gain, dtype=float)
    safe_b = np.where(b > 0, b, 1.0)
    return np.where(b > 0, b * np.log2(1.0 + p * g / safe_b), 0.0)


def sum_rate(power, bandwidth, gains):
    """Achievable sum-rate in bps over the comm-capable objects.

    ``gains`` is either a :class:`ChannelGains` or the array of comm gains.
    """
    g = gains.comm_gain if isinstance(gains, ChannelGains) else gains
    return float(np.sum(rate_terms(power, bandwidth, g)))
