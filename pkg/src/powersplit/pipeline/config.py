"""Run configuration and the per-device hyperparameter bundle.

Configuration is one JSON document validated against a closed schema:
unknown keys are errors so typos fail fast instead of silently falling back
to defaults. The bundle serializes the priors the training stage produces
and the streaming/synthesis stages consume.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from ..distributions import NormalPrior
from ..hdp import DurationMixturePrior, EmissionMixturePrior
from ..hsmm import DurationHyper


@dataclass(frozen=True)
class DeviceConfig:
    name: str
    n_states: int = 2
    sigma2: float = 100.0


@dataclass(frozen=True)
class ControlConfig:
    n_loads: int = 10000
    n_houses: int = 20
    steps: int = 1440
    amplitude_frac: float = 0.5      # sinusoid amplitude / nominal baseline
    period: int = 720                # samples per reference cycle
    transient: int = 240
    hook: str = "none"               # none | oracle | fbpf
    hook_particles: int = 200
    meter_noise_var: float = 1.0


_DEFAULT_DEVICES = (
    DeviceConfig("compressor", 2, 2500.0),
    DeviceConfig("furnace", 3, 400.0),
    DeviceConfig("refrigerator", 2, 100.0),
    DeviceConfig("dishwasher", 3, 400.0),
)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    particles: int = 2000
    weak_limit: int = 8
    sweeps: int = 60
    burn_in: int = 40
    horizon: int = 5000
    meter_noise_var: float = 0.0
    devices: tuple[DeviceConfig, ...] = _DEFAULT_DEVICES
    control: ControlConfig = field(default_factory=ControlConfig)

    def device_names(self) -> list[str]:
        return [d.name for d in self.devices]


_SCHEMA = {
    "seed": int,
    "particles": int,
    "weak_limit": int,
    "sweeps": int,
    "burn_in": int,
    "horizon": int,
    "meter_noise_var": (int, float),
    "devices": list,
    "control": dict,
}
_DEVICE_SCHEMA = {"name": str, "n_states": int, "sigma2": (int, float)}
_CONTROL_SCHEMA = {
    "n_loads": int, "n_houses": int, "steps": int,
    "amplitude_frac": (int, float), "period": int, "transient": int,
    "hook": str, "hook_particles": int, "meter_noise_var": (int, float),
}


def _check_keys(doc: dict, schema: dict, where: str):
    for key, val in doc.items():
        if key not in schema:
            raise ValueError(f"unknown config key {key!r} in {where}")
        if not isinstance(val, schema[key]):
            raise ValueError(f"config key {key!r} in {where} has wrong type")


def load_config(path_or_doc) -> RunConfig:
    """Parse and validate a JSON config; dicts are accepted directly."""
    if isinstance(path_or_doc, dict):
        doc = path_or_doc
    else:
        with open(path_or_doc, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    _check_keys(doc, _SCHEMA, "top level")
    kwargs = {k: v for k, v in doc.items() if k not in ("devices", "control")}
    if "devices" in doc:
        devs = []
        for i, d in enumerate(doc["devices"]):
            _check_keys(d, _DEVICE_SCHEMA, f"devices[{i}]")
            if "name" not in d:
                raise ValueError(f"devices[{i}] needs a name")
            devs.append(DeviceConfig(**d))
        kwargs["devices"] = tuple(devs)
    if "control" in doc:
        _check_keys(doc["control"], _CONTROL_SCHEMA, "control")
        kwargs["control"] = ControlConfig(**doc["control"])
    cfg = RunConfig(**kwargs)
    if cfg.control.hook not in ("none", "oracle", "fbpf"):
        raise ValueError(f"unknown control hook {cfg.control.hook!r}")
    return cfg


# ---------------------------------------------------------------------------
# the hyperparameter bundle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DeviceBundle:
    """Priors for one device: what training emits and streaming consumes."""

    name: str
    emission_mix: EmissionMixturePrior
    duration_mix: DurationMixturePrior
    alpha: float          # symmetric transition concentration
    sigma2: float         # fixed emission variance
    r: int                # fixed negative-binomial shape

    @property
    def n_states(self) -> int:
        return len(self.emission_mix.components)


@dataclass(frozen=True)
class HyperParamBundle:
    devices: tuple[DeviceBundle, ...]

    def device(self, name: str) -> DeviceBundle:
        for d in self.devices:
            if d.name == name:
                return d
        raise KeyError(name)


def bundle_to_doc(bundle: HyperParamBundle) -> dict:
    out = {"devices": []}
    for d in bundle.devices:
        out["devices"].append({
            "name": d.name,
            "alpha": d.alpha,
            "sigma2": d.sigma2,
            "r": d.r,
            "emission": {
                "weights": [float(w) for w in d.emission_mix.weights],
                "means": [c.mean for c in d.emission_mix.components],
                "vars": [c.var for c in d.emission_mix.components],
            },
            "duration": {
                "weights": [float(w) for w in d.duration_mix.weights],
                "components": [asdict(h) for h in d.duration_mix.components],
            },
        })
    return out


def bundle_from_doc(doc: dict) -> HyperParamBundle:
    devs = []
    for d in doc["devices"]:
        em = d["emission"]
        emission = EmissionMixturePrior(
            weights=np.asarray(em["weights"], dtype=float),
            components=tuple(NormalPrior(m, v) for m, v in zip(em["means"], em["vars"])),
        )
        du = d["duration"]
        duration = DurationMixturePrior(
            weights=np.asarray(du["weights"], dtype=float),
            components=tuple(DurationHyper(**h) for h in du["components"]),
        )
        devs.append(DeviceBundle(name=d["name"], emission_mix=emission,
                                 duration_mix=duration, alpha=float(d["alpha"]),
                                 sigma2=float(d["sigma2"]), r=int(d["r"])))
    return HyperParamBundle(devices=tuple(devs))


def save_bundle(bundle: HyperParamBundle, path) -> None:
    from .io import atomic_write_text
    atomic_write_text(path, json.dumps(bundle_to_doc(bundle), indent=2) + "\n")


def load_bundle(path) -> HyperParamBundle:
    with open(path, "r", encoding="utf-8") as fh:
        return bundle_from_doc(json.load(fh))


def default_bundle(config: RunConfig | None = None) -> HyperParamBundle:
    """Synthesis-ready bundle for the standard four-device house: one
    dominant load about ten times the others."""
    def dur(a_lam, b_lam, r=2):
        return DurationHyper(a_phi=2.0, b_phi=2.0, a_lam=a_lam, b_lam=b_lam,
                             a_vphi=2.0, b_vphi=6.0, r=r)

    def dev(name, means, taus, sigma2, lam_scale, r=2):
        M = len(means)
        em = EmissionMixturePrior(
            weights=np.full(M, 1.0 / M),
            components=tuple(NormalPrior(m, t) for m, t in zip(means, taus)),
        )
        dm = DurationMixturePrior(weights=np.array([1.0]),
                                  components=(dur(lam_scale * 2.0, 2.0, r),))
        return DeviceBundle(name=name, emission_mix=em, duration_mix=dm,
                            alpha=1.0, sigma2=sigma2, r=r)

    devs = (
        dev("compressor", (0.0, 5000.0), (400.0, 10000.0), 2500.0, 8.0),
        dev("furnace", (0.0, 300.0, 800.0), (100.0, 400.0, 900.0), 400.0, 6.0),
        dev("refrigerator", (0.0, 150.0), (25.0, 100.0), 100.0, 10.0),
        dev("dishwasher", (0.0, 250.0, 1200.0), (100.0, 400.0, 900.0), 400.0, 4.0),
    )
    if config is not None:
        wanted = {d.name for d in config.devices}
        devs = tuple(d for d in devs if d.name in wanted)
        if not devs:
            raise ValueError("no default priors for the configured devices")
    return HyperParamBundle(devices=devs)
