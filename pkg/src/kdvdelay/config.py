"""TOML run configuration: schema, defaults, overrides and resolution presets.

Every key has a documented default; unknown sections or keys are errors.
``resolve`` materializes all defaults so that a resolved configuration fully
describes a run.
"""
from __future__ import annotations

import copy
import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .certify import Certificate, build_certificate, default_certificate, mu2_of_mu1
from .model import ConfigurationError, DelayProfile, GainConfig
from .simulate import InitialCondition, InitialHistory, SchemeConfig, SimulationConfig

_NUM = (int, float)

# section -> key -> (accepted types, default). ``None`` defaults are derived.
SCHEMA: dict = {
    "domain": {"L": (_NUM, 5.0)},
    "grid": {"nx": (int, 256), "nrho": (int, 256)},
    "time": {"dt": (_NUM, None), "horizon": (_NUM, 600.0)},
    "gains": {"alpha": (_NUM, 1.0), "beta": (_NUM, 0.5)},
    "delay": {
        "kind": (str, "sinusoidal"),
        "tau0": (_NUM, None),
        "mean": (_NUM, 2.0),
        "amplitude": (_NUM, 0.5),
        "frequency": (_NUM, 1.0),
        "file": (str, ""),
        "interpolation": (str, "cubic"),
        "M": (_NUM, None),
        "d": (_NUM, None),
    },
    "scheme": {
        "theta": (_NUM, 0.5),
        "delay_channel": (str, "transport"),
        "nonlinear": (bool, False),
        "picard_tol": (_NUM, 1e-12),
        "picard_max_iters": (int, 50),
        "transport_dissipation": (_NUM, 0.03125),
    },
    "ic": {"kind": (str, "sine"), "amplitude": (_NUM, 1.0)},
    "z0": {"kind": (str, "zero"), "value": (_NUM, 0.0)},
    "certificate": {"mu1": (_NUM, None), "mu2": (_NUM, None), "variant": (str, "proposition")},
    "analysis": {
        "slack": (_NUM, 0.05),
        "window": (_NUM, 0.5),
        "record_every": (int, 1),
        "snapshot_every": (_NUM, 0.0),
        "kato_T": (_NUM, 0.0),
    },
    "optimize": {"points": (int, 1001), "tol": (_NUM, 1e-12)},
    "sweep": {
        "alpha": (list, None),
        "beta": (list, None),
        "d": (list, None),
        "L": (list, None),
        "fit_horizon": (_NUM, 0.0),
        "workers": (int, 0),
        "cap": (int, 10_000),
    },
}

RESOLUTIONS = {
    "coarse": {"nx": 64, "nrho": 64},
    "reference": {"nx": 256, "nrho": 256},
    "double": {"nx": 512, "nrho": 512},
}


class ConfigError(ConfigurationError):
    """Malformed or inconsistent configuration (CLI exit status 2)."""


def default_dt(L: float, nx: int) -> float:
    """``min(0.25 h, 0.01)``."""
    return min(0.25 * L / nx, 0.01)


def _check_type(section: str, key: str, value, types):
    if types is bool:
        ok = isinstance(value, bool)
    elif types is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif types == _NUM:
        ok = isinstance(value, _NUM) and not isinstance(value, bool)
    else:
        ok = isinstance(value, types)
    if not ok:
        name = types.__name__ if isinstance(types, type) else "number"
        raise ConfigError(f"{section}.{key}: expected {name}, got {value!r}")


def validate_keys(data: dict) -> None:
    """Reject unknown sections and keys and values of the wrong type."""
    for section, body in data.items():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        if not isinstance(body, dict):
            raise ConfigError(f"[{section}] must be a table")
        for key, value in body.items():
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {section}.{key}")
            _check_type(section, key, value, SCHEMA[section][key][0])


def parse_override(text: str) -> tuple[str, str, object]:
    """Parse ``section.key=value``; the value is read as a TOML value, else as a string."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    path, raw = (p.strip() for p in text.split("=", 1))
    if path.count(".") != 1:
        raise ConfigError(f"override key {path!r} must be section.key")
    section, key = path.split(".")
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    return section, key, value


def load_config(path: str | Path | None = None, overrides=(), resolution: str | None = None) -> dict:
    """Read a TOML file (or start empty), apply overrides and a resolution preset, and resolve."""
    data: dict = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    validate_keys(data)
    if resolution is not None:
        if resolution not in RESOLUTIONS:
            raise ConfigError(f"unknown resolution preset {resolution!r} (choose from {sorted(RESOLUTIONS)})")
        data.setdefault("grid", {}).update(RESOLUTIONS[resolution])
    for item in overrides:
        section, key, value = parse_override(item)
        data.setdefault(section, {})[key] = value
    validate_keys(data)
    return resolve(data)


def resolve(data: dict) -> dict:
    """Fill every schema key; derived defaults (``dt``, delay bounds) are computed here."""
    validate_keys(data)
    out = {s: {k: copy.deepcopy(v[1]) for k, v in keys.items()} for s, keys in SCHEMA.items()}
    for section, body in data.items():
        out[section].update(copy.deepcopy(body))
    if out["time"]["dt"] is None:
        out["time"]["dt"] = default_dt(out["domain"]["L"], out["grid"]["nx"])
    dl = out["delay"]
    if dl["kind"] == "constant":
        if dl["tau0"] is None:
            raise ConfigError("delay.tau0 is required for a constant delay")
        dl["M"] = dl["tau0"] if dl["M"] is None else dl["M"]
        dl["d"] = 0.0 if dl["d"] is None else dl["d"]
    elif dl["kind"] == "sinusoidal":
        a = abs(dl["amplitude"])
        dl["tau0"] = dl["mean"] - a if dl["tau0"] is None else dl["tau0"]
        dl["M"] = dl["mean"] + a if dl["M"] is None else dl["M"]
        dl["d"] = a * abs(dl["frequency"]) if dl["d"] is None else dl["d"]
    elif dl["kind"] == "tabulated":
        if not dl["file"]:
            raise ConfigError("delay.file is required for a tabulated delay")
        if dl["M"] is None or dl["d"] is None:
            raise ConfigError("tabulated delay needs declared delay.M and delay.d")
    else:
        raise ConfigError(f"unknown delay.kind {dl['kind']!r}")
    for k in ("M", "d", "tau0"):
        if dl[k] is not None:
            dl[k] = float(dl[k])
    return out


def load_delay_table(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Two-column ``t, tau`` text file; ``#`` comments and a non-numeric header are skipped."""
    try:
        arr = np.genfromtxt(path, delimiter=None if str(path).endswith(".txt") else ",",
                            comments="#", invalid_raise=True)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read delay table {path}: {exc}") from exc
    arr = np.atleast_2d(arr)
    arr = arr[~np.isnan(arr).any(axis=1)]
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ConfigError(f"delay table {path} must have two columns (t, tau)")
    return arr[:, 0], arr[:, 1]


def build_profile(cfg: dict, base_dir: str | Path | None = None) -> DelayProfile:
    dl = cfg["delay"]
    if dl["kind"] == "constant":
        return DelayProfile.constant(float(dl["tau0"]), M=dl["M"], d=dl["d"])
    if dl["kind"] == "sinusoidal":
        return DelayProfile.sinusoidal(float(dl["mean"]), float(dl["amplitude"]), float(dl["frequency"]),
                                       M=dl["M"], d=dl["d"], tau0=dl["tau0"])
    path = Path(dl["file"])
    if base_dir is not None and not path.is_absolute():
        path = Path(base_dir) / path
    t, v = load_delay_table(path)
    return DelayProfile.tabulated(t, v, M=dl["M"], d=dl["d"], tau0=dl["tau0"],
                                  interpolation=dl["interpolation"])


def build_gains(cfg: dict) -> GainConfig:
    return GainConfig(float(cfg["gains"]["alpha"]), float(cfg["gains"]["beta"]))


def build_certificate_from(cfg: dict, profile: DelayProfile) -> Certificate:
    """Certificate for the configured ``mu1``/``mu2``; missing values use the defaults."""
    g = cfg["gains"]
    L = float(cfg["domain"]["L"])
    c = cfg["certificate"]
    al, be = float(g["alpha"]), float(g["beta"])
    if c["mu1"] is None:
        cert = default_certificate(al, be, profile.d, L, profile.M)
        if c["variant"] == cert.variant:
            return cert
        return build_certificate(al, be, profile.d, L, profile.M, cert.mu1, cert.mu2, variant=c["variant"])
    mu1 = float(c["mu1"])
    if c["mu2"] is not None:
        mu2 = float(c["mu2"])
    else:
        mu2 = 0.0 if be == 0 else mu2_of_mu1(al, be, profile.d, L, mu1)
    return build_certificate(al, be, profile.d, L, profile.M, mu1, mu2, variant=c["variant"])


def build_simulation(cfg: dict, certificate: Certificate | None = None,
                     base_dir: str | Path | None = None) -> SimulationConfig:
    profile = build_profile(cfg, base_dir)
    s = cfg["scheme"]
    scheme = SchemeConfig(
        dt=float(cfg["time"]["dt"]), horizon=float(cfg["time"]["horizon"]), theta=float(s["theta"]),
        delay_channel=s["delay_channel"], nonlinear=bool(s["nonlinear"]),
        picard_tol=float(s["picard_tol"]), picard_max_iters=int(s["picard_max_iters"]),
        transport_dissipation=float(s["transport_dissipation"]),
    )
    an = cfg["analysis"]
    return SimulationConfig(
        L=float(cfg["domain"]["L"]), nx=int(cfg["grid"]["nx"]), nrho=int(cfg["grid"]["nrho"]),
        gains=build_gains(cfg), profile=profile, scheme=scheme,
        ic=InitialCondition(cfg["ic"]["kind"], float(cfg["ic"]["amplitude"])),
        z0=InitialHistory(cfg["z0"]["kind"], float(cfg["z0"]["value"])),
        certificate=certificate,
        snapshot_every=float(an["snapshot_every"]) or None,
        record_every=int(an["record_every"]),
    )


def dumps(cfg: dict) -> str:
    """Deterministic TOML rendering of a resolved configuration (``None`` keys omitted)."""
    lines = []
    for section in SCHEMA:
        lines.append(f"[{section}]")
        for key in SCHEMA[section]:
            value = cfg.get(section, {}).get(key)
            if value is None:
                continue
            lines.append(f"{key} = {_toml_value(value)}")
        lines.append("")
    return "\n".join(lines)


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if math.isinf(v) or math.isnan(v):
            raise ConfigError("non-finite value in configuration")
        return repr(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, list):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise ConfigError(f"cannot serialize {v!r}")


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass(frozen=True)
class SweepAxis:
    name: str
    values: tuple


def sweep_axes(cfg: dict) -> list[SweepAxis]:
    """Sweep ranges: a list of explicit values, or ``[start, stop, num]`` tagged as ``["linspace", start, stop, num]``."""
    axes = []
    for name in ("alpha", "beta", "d", "L"):
        spec = cfg["sweep"][name]
        if spec is None:
            continue
        if not spec:
            axes.append(SweepAxis(name, ()))
            continue
        if isinstance(spec[0], str):
            if spec[0] != "linspace" or len(spec) != 4:
                raise ConfigError(f"sweep.{name}: expected [\"linspace\", start, stop, num]")
            _, a, b, n = spec
            if not isinstance(n, int) or n < 0:
                raise ConfigError(f"sweep.{name}: num must be a nonnegative integer")
            vals = tuple(float(x) for x in np.linspace(float(a), float(b), n))
        else:
            for x in spec:
                _check_type("sweep", name, x, _NUM)
            vals = tuple(float(x) for x in spec)
        axes.append(SweepAxis(name, vals))
    return axes
