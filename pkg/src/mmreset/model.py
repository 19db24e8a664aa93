"""Device, pulse and run configuration.

Unit convention used throughout the package:

* frequencies and couplings (``f_*``, ``g_*``, ``hopping_J``, ``kappa_*``) are
  ordinary frequencies in GHz, i.e. the ``x/2pi`` values quoted for devices;
* ``gamma_*`` are inverse lifetimes in 1/ns;
* pulse times are in ns, coherence times in us, temperatures in mK.

Angular conversion (``omega = 2 pi f``) happens only when Hamiltonians are
assembled and inside analytic formulas.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ConfigError

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

__all__ = [
    "TransmonParams",
    "WaveguideParams",
    "ReadoutResonatorParams",
    "FluxPulse",
    "DeviceConfig",
    "Violation",
    "ValidationReport",
    "validate",
    "estimate_gamma_1d",
    "config_to_dict",
    "config_from_dict",
    "config_hash",
    "load_config",
    "read_config_file",
    "reference_device",
]


@dataclass(frozen=True)
class TransmonParams:
    f_ge_max: float = 7.63
    f_ge_min: float = 3.78
    anharmonicity_eta: float = -0.179
    levels_d: int = 3
    t1_idle_ge: float = 12.0
    t1_idle_ef: float = 4.7
    tphi_idle: float = 7.3

    @property
    def charging_energy(self) -> float:
        return -self.anharmonicity_eta


def estimate_gamma_1d(g_uc: float, hopping_J: float) -> float:
    """Band-centre emission rate ``(2 pi g)^2 / (2 pi J)`` in 1/ns."""
    return 2.0 * math.pi * g_uc**2 / hopping_J


@dataclass(frozen=True)
class WaveguideParams:
    """Open tight-binding chain of identical cells damped at both ends.

    ``gamma_1d`` is the in-band emission rate used by the sideband-sum model.
    When left as ``None`` it is estimated from ``g_uc`` and ``hopping_J``.
    The default end damping ``kappa = 2 J`` is reflectionless at band centre.
    """

    n_cells: int = 52
    f_cell: float = 6.0
    hopping_J: float = 0.5
    coupling_site_x0: int = 26
    g_uc: float = 0.18
    kappa_left: float = 1.0
    kappa_right: float = 1.0
    gamma_1d: float | None = None

    @property
    def passband(self) -> tuple[float, float]:
        return (self.f_cell - 2 * self.hopping_J, self.f_cell + 2 * self.hopping_J)

    @property
    def emission_rate(self) -> float:
        if self.gamma_1d is not None:
            return self.gamma_1d
        return estimate_gamma_1d(self.g_uc, self.hopping_J)


@dataclass(frozen=True)
class ReadoutResonatorParams:
    """Optional lumped readout mode coupled to the atom and to one chain cell."""

    f_r: float = 7.3
    g_qr: float = 0.05
    g_wr: float = 0.02
    site: int = 26
    kappa: float = 0.0


@dataclass(frozen=True)
class FluxPulse:
    """Flux pulse ``bias + A * E(t) * sin(2 pi f_mod t)``.

    ``f_mod = 0`` selects the unmodulated (direct-tuning) square pulse whose
    carrier is identically one.
    """

    phi_amplitude: float = 0.0
    f_mod: float = 0.0
    tau_pulse: float = 104.0
    tau_buffer: float = 2.0
    sigma_filter: float = 1.0
    dt_sample: float = 0.01
    phi_bias: float = 0.0

    @property
    def modulated(self) -> bool:
        return self.f_mod > 0.0


@dataclass(frozen=True)
class DeviceConfig:
    transmon: TransmonParams = field(default_factory=TransmonParams)
    waveguide: WaveguideParams = field(default_factory=WaveguideParams)
    thermal_temperature: float = 43.0
    rng_seed: int = 0
    readout_resonator: ReadoutResonatorParams | None = None


def reference_device(**overrides: Any) -> DeviceConfig:
    """Device with the reported qubit numbers and the default chain model."""
    return dataclasses.replace(DeviceConfig(), **overrides)


@dataclass(frozen=True)
class Violation:
    path: str
    message: str

    def __str__(self) -> str:
        return f"{self.path}: {self.message}"


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()

    def __bool__(self) -> bool:
        # truthy when something is wrong, mirroring a non-empty list
        return bool(self.violations)

    def __len__(self) -> int:
        return len(self.violations)

    def __iter__(self):
        return iter(self.violations)

    @property
    def ok(self) -> bool:
        return not self.violations

    def paths(self) -> list[str]:
        return [v.path for v in self.violations]

    def raise_if_invalid(self) -> None:
        if self.violations:
            raise ConfigError("; ".join(str(v) for v in self.violations))


def _finite(x: Any) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _check_transmon(p: TransmonParams, prefix: str) -> list[Violation]:
    out = []
    for name in ("f_ge_max", "f_ge_min", "anharmonicity_eta",
                 "t1_idle_ge", "t1_idle_ef", "tphi_idle"):
        if not _finite(getattr(p, name)):
            out.append(Violation(f"{prefix}.{name}", "must be a finite number"))
    if out:
        return out
    if not p.f_ge_min > 0:
        out.append(Violation(f"{prefix}.f_ge_min", "must be > 0"))
    if not p.f_ge_max > p.f_ge_min:
        out.append(Violation(f"{prefix}.f_ge_max", "must exceed f_ge_min"))
    if not p.anharmonicity_eta < 0:
        out.append(Violation(f"{prefix}.anharmonicity_eta", "must be negative"))
    if not (isinstance(p.levels_d, int) and p.levels_d >= 2):
        out.append(Violation(f"{prefix}.levels_d", "must be an integer >= 2"))
    for name in ("t1_idle_ge", "t1_idle_ef", "tphi_idle"):
        if not getattr(p, name) > 0:
            out.append(Violation(f"{prefix}.{name}", "must be > 0"))
    return out


def _check_waveguide(w: WaveguideParams, prefix: str) -> list[Violation]:
    out = []
    if not (isinstance(w.n_cells, int) and w.n_cells >= 2):
        out.append(Violation(f"{prefix}.n_cells", "must be an integer >= 2"))
    for name in ("f_cell", "hopping_J", "g_uc", "kappa_left", "kappa_right"):
        if not _finite(getattr(w, name)):
            out.append(Violation(f"{prefix}.{name}", "must be a finite number"))
    if out:
        return out
    if not (isinstance(w.coupling_site_x0, int) and 1 <= w.coupling_site_x0 <= w.n_cells):
        out.append(Violation(f"{prefix}.coupling_site_x0", "must lie in [1, n_cells]"))
    if not w.hopping_J > 0:
        out.append(Violation(f"{prefix}.hopping_J", "must be > 0"))
    for name in ("kappa_left", "kappa_right"):
        if getattr(w, name) < 0:
            out.append(Violation(f"{prefix}.{name}", "must be >= 0"))
    if w.gamma_1d is not None and not (_finite(w.gamma_1d) and w.gamma_1d >= 0):
        out.append(Violation(f"{prefix}.gamma_1d", "must be >= 0"))
    if w.f_cell - 2 * w.hopping_J <= 0:
        out.append(Violation(f"{prefix}.f_cell", "passband must lie at positive frequency"))
    return out


def _check_pulse(p: FluxPulse, prefix: str) -> list[Violation]:
    out = []
    for name in ("phi_amplitude", "f_mod", "tau_pulse", "tau_buffer",
                 "sigma_filter", "dt_sample", "phi_bias"):
        if not _finite(getattr(p, name)):
            out.append(Violation(f"{prefix}.{name}", "must be a finite number"))
    if out:
        return out
    if not p.dt_sample > 0:
        out.append(Violation(f"{prefix}.dt_sample", "must be > 0"))
    if p.sigma_filter < 0:
        out.append(Violation(f"{prefix}.sigma_filter", "must be >= 0"))
    if p.tau_buffer < 0:
        out.append(Violation(f"{prefix}.tau_buffer", "must be >= 0"))
    if p.tau_pulse < 2 * p.tau_buffer:
        out.append(Violation(f"{prefix}.tau_pulse", "must be >= 2 * tau_buffer"))
    if not abs(p.phi_amplitude) < 0.5:
        out.append(Violation(f"{prefix}.phi_amplitude", "|phi_amplitude| must be < 0.5"))
    if p.f_mod < 0:
        out.append(Violation(f"{prefix}.f_mod", "must be >= 0"))
    return out


def _check_readout(r: ReadoutResonatorParams, n_cells: int, prefix: str) -> list[Violation]:
    out = []
    if not r.f_r > 0:
        out.append(Violation(f"{prefix}.f_r", "must be > 0"))
    if r.kappa < 0:
        out.append(Violation(f"{prefix}.kappa", "must be >= 0"))
    if not (isinstance(r.site, int) and 1 <= r.site <= n_cells):
        out.append(Violation(f"{prefix}.site", "must lie in [1, n_cells]"))
    return out


def validate(obj: DeviceConfig | TransmonParams | WaveguideParams | FluxPulse) -> ValidationReport:
    """Collect every violated invariant of ``obj`` with its field path.

    Never raises; an empty report means the object is usable downstream.
    """
    if isinstance(obj, TransmonParams):
        return ValidationReport(tuple(_check_transmon(obj, "transmon")))
    if isinstance(obj, WaveguideParams):
        return ValidationReport(tuple(_check_waveguide(obj, "waveguide")))
    if isinstance(obj, FluxPulse):
        return ValidationReport(tuple(_check_pulse(obj, "pulse")))
    if not isinstance(obj, DeviceConfig):
        return ValidationReport((Violation("<root>", f"unsupported type {type(obj).__name__}"),))

    out = _check_transmon(obj.transmon, "transmon") + _check_waveguide(obj.waveguide, "waveguide")
    if not (_finite(obj.thermal_temperature) and obj.thermal_temperature >= 0):
        out.append(Violation("thermal_temperature", "must be >= 0"))
    if not isinstance(obj.rng_seed, int) or obj.rng_seed < 0:
        out.append(Violation("rng_seed", "must be a non-negative integer"))
    if obj.readout_resonator is not None and isinstance(obj.waveguide.n_cells, int):
        out += _check_readout(obj.readout_resonator, obj.waveguide.n_cells, "readout_resonator")
    if not out:
        top = obj.waveguide.passband[1]
        if top >= obj.transmon.f_ge_max:
            out.append(Violation("waveguide.hopping_J",
                                 "passband must lie below f_ge_max for upper-sweet-spot idling"))
    return ValidationReport(tuple(out))


# -- config files ----------------------------------------------------------

_SECTIONS = {
    "transmon": TransmonParams,
    "waveguide": WaveguideParams,
    "readout_resonator": ReadoutResonatorParams,
}
_TOP_KEYS = {"thermal_temperature", "rng_seed"}


def config_to_dict(config: DeviceConfig) -> dict[str, Any]:
    d = dataclasses.asdict(config)
    if d["readout_resonator"] is None:
        del d["readout_resonator"]
    return d


def _build(cls, data: Any, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a table")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {unknown}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name in data:
            v = data[f.name]
            # integers are accepted where floats are expected, never the reverse
            if f.type in ("float", "float | None") and isinstance(v, int) and not isinstance(v, bool):
                v = float(v)
            kwargs[f.name] = v
    return cls(**kwargs)


def config_from_dict(data: dict[str, Any], extra_sections: tuple[str, ...] = ()) -> tuple[DeviceConfig, dict[str, Any]]:
    """Build a :class:`DeviceConfig` from nested mappings.

    Keys named in ``extra_sections`` are returned untouched in the second
    element; any other unrecognised key raises :class:`ConfigError`.
    """
    if not isinstance(data, dict):
        raise ConfigError("config root must be a table")
    allowed = set(_SECTIONS) | _TOP_KEYS | set(extra_sections)
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"unknown top-level keys {unknown}")
    kwargs: dict[str, Any] = {}
    for key, cls in _SECTIONS.items():
        if key in data:
            kwargs[key] = _build(cls, data[key], key)
    if "thermal_temperature" in data:
        kwargs["thermal_temperature"] = float(data["thermal_temperature"])
    if "rng_seed" in data:
        kwargs["rng_seed"] = data["rng_seed"]
    extras = {k: data[k] for k in extra_sections if k in data}
    try:
        config = DeviceConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return config, extras


def read_config_file(path: str | Path, extra_sections: tuple[str, ...] = ()) -> tuple[DeviceConfig, dict[str, Any]]:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return config_from_dict(data, extra_sections)


def load_config(path: str | Path) -> DeviceConfig:
    """Read a TOML device description, rejecting unknown keys."""
    config, _ = read_config_file(path)
    return config


def config_hash(config: DeviceConfig) -> str:
    """SHA-256 of the canonical JSON form; independent of key order."""
    blob = json.dumps(config_to_dict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()
