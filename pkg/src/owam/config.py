"""INI run definitions for the command line."""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .forecaster import ForecasterConfig
from .fpd import FpdConfig
from .harness import RunConfig, format_duration, parse_duration
from .scenarios import drift_dataset, planted_dataset
from .stream import FLOW_COUNT, Dataset, generate_synthetic, load_csv


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


# section -> key -> default (None = no default)
SCHEMA: dict[str, dict[str, object]] = {
    "data": {"path": None, "layout": "wide", "sample_interval": 300, "indicator": FLOW_COUNT,
             "zero_is_missing": False},
    "synthetic": {"scenario": "planted", "seed": 0, "n_sensors": 20, "days": 14, "noise_sigma": 0.1,
                  "anomaly_rate": 0.1},
    "run": {"mode": "offline", "loss_kind": "emd", "theta": 0.05, "update_mode": "owam_dynamic",
            "window_T": None, "targets": "random:5", "seed": None, "train_fraction": 0.8,
            "base_fraction": 0.5, "fusion": "weighted", "signed": False, "correlation_history": None,
            "refresh_normalizer": True, "run_id": ""},
    "fpd": {"window": 3600, "bin_interval": 300},
    "ae": {"lr": None, "decay": 0.99, "w_min": 0.05},
    "lstm": {"hidden_dim": 64, "lr": 1e-3, "batch_size": 32, "epochs": 50, "patience": 5,
             "val_fraction": 0.1, "update_epochs": 1},
    "output": {"dir": "runs/default"},
}


@dataclass
class CliConfig:
    run: RunConfig
    data: dict = field(default_factory=dict)
    synthetic: dict | None = None
    output_dir: Path = Path("runs/default")
    raw: configparser.ConfigParser | None = None
    targets_spec: str = "random:5"

    def load_dataset(self) -> Dataset:
        if self.synthetic is not None:
            return synthetic_dataset(self.synthetic)
        d = self.data
        return load_csv(d["path"], d["layout"], d["sample_interval"], d["indicator"], d["zero_is_missing"])


def synthetic_dataset(spec: dict) -> Dataset:
    scenario = spec["scenario"]
    if scenario == "planted":
        return planted_dataset(spec["seed"], n_sensors=spec["n_sensors"], days=spec["days"],
                               rate=spec["anomaly_rate"], noise_sigma=spec["noise_sigma"])[0]
    if scenario == "drift":
        return drift_dataset(spec["seed"], n_sensors=spec["n_sensors"], days=spec["days"],
                             rate=spec["anomaly_rate"], noise_sigma=spec["noise_sigma"])[0]
    if scenario in ("diurnal", "flat"):
        return generate_synthetic(spec["n_sensors"], spec["days"] * 288, spec["seed"], scenario,
                                  spec["noise_sigma"])
    raise ConfigError("synthetic.scenario", f"unknown scenario {scenario!r}")


def _convert(key: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"expected a boolean, got {raw!r}")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError as exc:
        raise ConfigError(key, str(exc)) from None
    return raw


def _section(cp: configparser.ConfigParser, name: str) -> dict:
    schema = SCHEMA[name]
    out = dict(schema)
    if cp.has_section(name):
        for key, raw in cp.items(name):
            out[key] = _convert(f"{name}.{key}", raw, schema[key])
    return out


def _targets(spec: str, dataset_ids: tuple[str, ...] | None, seed: int) -> tuple[str, ...]:
    spec = spec.strip()
    if spec.startswith("random:"):
        n = int(spec.split(":", 1)[1])
        if dataset_ids is None:
            raise ConfigError("run.targets", "random targets need a dataset")
        rng = np.random.default_rng(seed)
        pick = rng.choice(len(dataset_ids), size=min(n, len(dataset_ids)), replace=False)
        return tuple(dataset_ids[i] for i in sorted(pick))
    return tuple(t.strip() for t in spec.split(",") if t.strip())


def parse_config(text: str, base_dir: Path | None = None) -> CliConfig:
    """Parse and validate an INI run definition; raises ConfigError naming the first bad key."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    cp.optionxform = str  # keep key case so unknown keys are reported verbatim
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("<file>", str(exc).splitlines()[0]) from None
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(sec, "unknown section")
        for key in cp[sec]:
            if key not in SCHEMA[sec]:
                raise ConfigError(f"{sec}.{key}", "unknown key")

    data = _section(cp, "data")
    run = _section(cp, "run")
    fpd = _section(cp, "fpd")
    ae = _section(cp, "ae")
    lstm = _section(cp, "lstm")
    out = _section(cp, "output")
    synthetic = _section(cp, "synthetic") if cp.has_section("synthetic") else None

    if run["seed"] is None:
        raise ConfigError("run.seed", "seed is mandatory")
    try:
        run["seed"] = int(run["seed"])
    except ValueError:
        raise ConfigError("run.seed", f"expected an integer, got {run['seed']!r}") from None
    if synthetic is None and not data["path"]:
        raise ConfigError("data.path", "either [data] path or a [synthetic] section is required")
    if data["path"] and base_dir is not None and not Path(data["path"]).is_absolute():
        data["path"] = str(base_dir / data["path"])

    def opt(key, conv):
        v = run[key]
        if v is None or v == "":
            return None
        try:
            return conv(v)
        except ValueError as exc:
            raise ConfigError(f"run.{key}", str(exc)) from None

    try:
        fpd_cfg = FpdConfig(int(fpd["window"]), int(fpd["bin_interval"]))
    except ValueError as exc:
        raise ConfigError("fpd.window", str(exc)) from None
    ae_lr = None if ae["lr"] in (None, "") else _convert("ae.lr", str(ae["lr"]), 0.0)
    cfg = RunConfig(
        mode=run["mode"], loss_kind=run["loss_kind"], theta=run["theta"], update_mode=run["update_mode"],
        window_T=opt("window_T", parse_duration), targets=(), seed=run["seed"],
        train_fraction=run["train_fraction"], base_fraction=run["base_fraction"], fusion=run["fusion"],
        signed=run["signed"], correlation_history=opt("correlation_history", int),
        refresh_normalizer=run["refresh_normalizer"], ae_lr=ae_lr, ae_decay=ae["decay"], ae_w_min=ae["w_min"],
        fpd=fpd_cfg, model=ForecasterConfig(**lstm), run_id=run["run_id"],
    )
    # targets are resolved once the dataset is known
    cli = CliConfig(cfg, data, synthetic, Path(out["dir"]), cp, run["targets"])
    _validate_fields(cfg)
    return cli


def _validate_fields(cfg: RunConfig) -> None:
    probe = dataclasses.replace(cfg, targets=("_",))
    try:
        probe.validate()
    except ValueError as exc:
        msg = str(exc)
        for key in ("mode", "loss_kind", "theta", "update_mode", "fusion", "window_T"):
            if key in msg:
                raise ConfigError(f"run.{key}", msg) from None
        raise ConfigError("run", msg) from None


def resolve_targets(cli: CliConfig, dataset: Dataset) -> RunConfig:
    targets = _targets(cli.targets_spec, dataset.sensor_ids, cli.run.seed)
    missing = [t for t in targets if t not in dataset.sensor_ids]
    if not targets or missing:
        raise ConfigError("run.targets", f"targets not in dataset: {missing or 'none given'}")
    return dataclasses.replace(cli.run, targets=targets)


def load_config(path: str | Path) -> CliConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("<file>", str(exc)) from None
    return parse_config(text, path.parent)


def snapshot(cli: CliConfig, cfg: RunConfig) -> str:
    """Canonical INI text for a resolved run, enough to repeat it exactly."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    if cli.synthetic is not None:
        cp["synthetic"] = {k: str(v) for k, v in cli.synthetic.items()}
    else:
        cp["data"] = {k: str(v) for k, v in cli.data.items() if v is not None}
    cp["run"] = {
        "mode": cfg.mode, "loss_kind": cfg.loss_kind, "theta": repr(cfg.theta), "update_mode": cfg.update_mode,
        "window_T": format_duration(cfg.window_T), "targets": ",".join(cfg.targets), "seed": str(cfg.seed),
        "train_fraction": repr(cfg.train_fraction), "base_fraction": repr(cfg.base_fraction),
        "fusion": cfg.fusion, "signed": str(cfg.signed),
        "correlation_history": "" if cfg.correlation_history is None else str(cfg.correlation_history),
        "refresh_normalizer": str(cfg.refresh_normalizer), "run_id": cfg.run_id,
    }
    cp["fpd"] = {"window": str(cfg.fpd.window), "bin_interval": str(cfg.fpd.bin_interval)}
    cp["ae"] = {"lr": "" if cfg.ae_lr is None else repr(cfg.ae_lr), "decay": repr(cfg.ae_decay),
                "w_min": repr(cfg.ae_w_min)}
    cp["lstm"] = {k: repr(v) if isinstance(v, float) else str(v) for k, v in dataclasses.asdict(cfg.model).items()}
    cp["output"] = {"dir": str(cli.output_dir)}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()
