"""INI run configuration: input paths, scenario span and every physical parameter."""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field, fields
from datetime import datetime
from pathlib import Path

from .engine import SCENARIOS, InputData, ScenarioConfig
from .plant import AggregatorParams, AuxParams, PlantParams
from .scheduling import OptProblemConfig
from .timeseries import SeriesError, TimeSeries
from .tracking import PidState


class ConfigError(ValueError):
    pass


REQUIRED_INPUTS = ("workload", "p_em", "p_rm", "regd")
OPTIONAL_INPUTS = ("regd_history", "wetbulb")

_PLANT_FIELDS = [f.name for f in fields(PlantParams) if f.name not in ("aggregator", "aux")]
_SERVER_FIELDS = [f.name for f in fields(AggregatorParams)]
_AUX_FIELDS = [f.name for f in fields(AuxParams)]
_OPT_FIELDS = ["horizon_h", "rollout_step", "soc_min", "soc_max", "penalty_weight", "max_evals", "tol",
               "reduced_order"]
_PID_FIELDS = ["Kp", "Ki", "Kd"]


@dataclass(frozen=True)
class RunManifest:
    inputs: dict[str, str]  # series name -> path as written in the config
    start: datetime
    end: datetime
    p_dm: float = 7.48
    scenarios: tuple[str, ...] = SCENARIOS
    seed: int = 0
    dt_inner: float = 4.0
    onpeak: tuple[int, int] = (11, 19)
    limits: dict[str, float] = field(default_factory=lambda: {"BL": 2148.0, "BL_MM": 2148.0, "OPBL_MM": 1990.0})
    initial_soc: float = 0.3
    initial_T_room: float = 25.0
    server_peak_w: float = 124.0  # nameplate, informational
    plant: PlantParams = field(default_factory=PlantParams)
    opt: OptProblemConfig = field(default_factory=OptProblemConfig)
    pid: PidState = field(default_factory=PidState)
    base_dir: Path = Path(".")

    def path(self, name: str) -> Path:
        p = Path(self.inputs[name])
        return p if p.is_absolute() else self.base_dir / p

    def scenario_config(self, scenario: str) -> ScenarioConfig:
        return ScenarioConfig(scenario, self.start, self.end, dt_inner=self.dt_inner,
                              dt_schedule=self.opt.control_step, P_dm_lim=self.limits[scenario],
                              onpeak=self.onpeak, seed=self.seed, initial_soc=self.initial_soc,
                              initial_T_room=self.initial_T_room, plant=self.plant, opt=self.opt, pid=self.pid)

    def with_flags(self, cop_derate: bool | None = None, reduced_order: bool | None = None) -> RunManifest:
        m = self
        if cop_derate is not None:
            m = dataclasses.replace(m, plant=dataclasses.replace(m.plant, cop_derate=cop_derate))
        if reduced_order is not None:
            m = dataclasses.replace(m, opt=dataclasses.replace(m.opt, reduced_order=reduced_order))
        return m


@dataclass(frozen=True)
class _ServerDefaults(AggregatorParams):
    server_peak_w: float = 124.0


def _convert(raw: str, like, key: str):
    try:
        if isinstance(like, bool):
            v = raw.strip().lower()
            if v in ("1", "true", "yes", "on"):
                return True
            if v in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(like, int):
            return int(raw)
        return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot read {raw!r} as {type(like).__name__}") from None


def _section(cp: configparser.ConfigParser, name: str, allowed: list[str], defaults, prefix: str) -> dict:
    out = {}
    if not cp.has_section(name):
        return out
    for key, raw in cp.items(name):
        if key not in allowed:
            raise ConfigError(f"[{name}] unknown key {key!r}")
        out[key] = _convert(raw, getattr(defaults, key), f"{prefix}.{key}")
    return out


def _build(cls, values: dict, section: str, **extra):
    try:
        return cls(**values, **extra)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def parse_config(text: str, base_dir: str | Path = ".") -> RunManifest:
    """Parse and validate a run configuration; omitted physical parameters take their defaults."""
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    cp.optionxform = str  # keys are case sensitive (Kp, N0, ...)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc).splitlines()[0]) from None
    known = {"run", "inputs", "plant", "servers", "aux", "scheduling", "tracking"}
    for s in cp.sections():
        if s not in known:
            raise ConfigError(f"unknown section [{s}]")

    missing = [f"inputs.{k}" for k in REQUIRED_INPUTS if not cp.has_option("inputs", k)]
    missing += [f"run.{k}" for k in ("start", "end") if not cp.has_option("run", k)]
    if missing:
        raise ConfigError("missing required keys: " + ", ".join(missing))

    inputs = {}
    for key, raw in cp.items("inputs"):
        if key in REQUIRED_INPUTS + OPTIONAL_INPUTS:
            inputs[key] = raw.strip()
        elif key != "p_dm":
            raise ConfigError(f"[inputs] unknown key {key!r}")
    p_dm = _convert(cp.get("inputs", "p_dm"), 1.0, "inputs.p_dm") if cp.has_option("inputs", "p_dm") else 7.48

    base = RunManifest(inputs, datetime(2000, 1, 1), datetime(2000, 1, 2))
    run = dict(cp.items("run"))
    run_keys = {"start", "end", "scenarios", "seed", "dt_inner", "onpeak_start", "onpeak_end", "initial_soc",
                "initial_T_room", "P_dm_lim_BL", "P_dm_lim_BL_MM", "P_dm_lim_OPBL_MM"}
    for key in run:
        if key not in run_keys:
            raise ConfigError(f"[run] unknown key {key!r}")
    try:
        start = datetime.fromisoformat(run["start"].strip())
        end = datetime.fromisoformat(run["end"].strip())
    except ValueError as exc:
        raise ConfigError(f"[run] {exc}") from None
    scenarios = tuple(s.strip() for s in run.get("scenarios", ",".join(SCENARIOS)).split(",") if s.strip())
    for s in scenarios:
        if s not in SCENARIOS:
            raise ConfigError(f"[run] unknown scenario {s!r}")
    limits = dict(base.limits)
    for s in SCENARIOS:
        if f"P_dm_lim_{s}" in run:
            limits[s] = _convert(run[f"P_dm_lim_{s}"], 1.0, f"run.P_dm_lim_{s}")
    onpeak = (_convert(run.get("onpeak_start", "11"), 1, "run.onpeak_start"),
              _convert(run.get("onpeak_end", "19"), 1, "run.onpeak_end"))

    server_vals = _section(cp, "servers", _SERVER_FIELDS + ["server_peak_w"], _ServerDefaults(), "servers")
    server_peak_w = server_vals.pop("server_peak_w", base.server_peak_w)
    agg = _build(AggregatorParams, server_vals, "servers")
    aux = _build(AuxParams, _section(cp, "aux", _AUX_FIELDS, AuxParams(), "aux"), "aux")
    plant = _build(PlantParams, _section(cp, "plant", _PLANT_FIELDS, PlantParams(), "plant"), "plant",
                   aggregator=agg, aux=aux)
    opt_vals = _section(cp, "scheduling", _OPT_FIELDS, OptProblemConfig(), "scheduling")
    opt = _build(OptProblemConfig, opt_vals, "scheduling")
    pid = _build(PidState, _section(cp, "tracking", _PID_FIELDS, PidState(), "tracking"), "tracking")

    m = RunManifest(inputs, start, end, p_dm, scenarios,
                    _convert(run.get("seed", "0"), 1, "run.seed"),
                    _convert(run.get("dt_inner", "4"), 1.0, "run.dt_inner"), onpeak, limits,
                    _convert(run.get("initial_soc", "0.3"), 1.0, "run.initial_soc"),
                    _convert(run.get("initial_T_room", "25"), 1.0, "run.initial_T_room"),
                    server_peak_w, plant, opt, pid, Path(base_dir))
    if not 0 <= m.initial_soc <= 1:
        raise ConfigError("[run] initial_soc must lie in [0, 1]")
    if p_dm < 0 or any(v <= 0 for v in limits.values()):
        raise ConfigError("demand price must be non-negative and demand limits positive")
    for s in scenarios:
        try:
            m.scenario_config(s)
        except ValueError as exc:
            raise ConfigError(f"[run] {exc}") from None
    return m


def load_config(path: str | Path) -> RunManifest:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, path.parent)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def serialize(m: RunManifest) -> str:
    """INI text that parses back to an equal manifest (given the same base directory)."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp["run"] = {"start": m.start.isoformat(), "end": m.end.isoformat(), "scenarios": ",".join(m.scenarios),
                 "seed": str(m.seed), "dt_inner": _fmt(m.dt_inner), "onpeak_start": str(m.onpeak[0]),
                 "onpeak_end": str(m.onpeak[1]), "initial_soc": _fmt(m.initial_soc),
                 "initial_T_room": _fmt(m.initial_T_room),
                 **{f"P_dm_lim_{s}": _fmt(v) for s, v in m.limits.items()}}
    cp["inputs"] = {**m.inputs, "p_dm": _fmt(m.p_dm)}
    cp["plant"] = {k: _fmt(getattr(m.plant, k)) for k in _PLANT_FIELDS}
    cp["servers"] = {**{k: _fmt(getattr(m.plant.aggregator, k)) for k in _SERVER_FIELDS},
                     "server_peak_w": _fmt(m.server_peak_w)}
    cp["aux"] = {k: _fmt(getattr(m.plant.aux, k)) for k in _AUX_FIELDS}
    cp["scheduling"] = {k: _fmt(getattr(m.opt, k)) for k in _OPT_FIELDS}
    cp["tracking"] = {k: _fmt(getattr(m.pid, k)) for k in _PID_FIELDS}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def load_inputs(m: RunManifest) -> InputData:
    """Read every referenced series; all files must exist and parse before a run starts."""
    series: dict[str, TimeSeries | None] = {k: None for k in REQUIRED_INPUTS + OPTIONAL_INPUTS}
    errors = []
    for name in m.inputs:
        path = m.path(name)
        if not path.is_file():
            errors.append(f"{name}: no such file {path}")
            continue
        try:
            series[name] = TimeSeries.from_csv(path)
        except SeriesError as exc:
            errors.append(f"{name}: {exc}")
    if errors:
        raise ConfigError("input errors:\n  " + "\n  ".join(errors))
    try:
        data = InputData(series["workload"], series["p_em"], series["p_rm"], series["wetbulb"], series["regd"],
                         series["regd_history"], m.p_dm)
        data.market()
        return data
    except (SeriesError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
