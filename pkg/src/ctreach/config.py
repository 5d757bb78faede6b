"""Run configuration: INI file + ``--set section.key=value`` overrides."""

from __future__ import annotations

import configparser
import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

from .abstraction import LinearizeConfig, Partition
from .controller import AnalyticLaw, NeuralNet, load_network, surrogate_path
from .geom import Box
from .graph import CatConfig
from .plant import PlantParams

DEFAULTS: dict[str, dict[str, str]] = {
    "controller": {
        "kind": "network",  # network | analytic
        "network": "builtin",  # path, or builtin for the shipped surrogate
        "kp": "-0.74",
        "ktheta": "-0.44",
        "latent": "off",
        "latent_lo": "-0.8",
        "latent_hi": "0.8",
    },
    "partition": {
        "p_lo": "-10", "p_hi": "10",
        "theta_lo_deg": "-30", "theta_hi_deg": "30",
        "bins_p": "128", "bins_theta": "128",
    },
    "plant": {"v": "5", "L": "5", "phi_limit_deg": "80", "tan_guard_deg": "5"},
    "abstraction": {
        "horizon": "1.0", "n_start": "64", "n_fit": "512", "n_audit": "4096",
        "margin": "0.1", "floor": "1e-4", "sim_substep": "0.00390625",
    },
    "cat": {"bf0": "0.1", "inc": "1.5", "max_retries": "8", "strict_paper": "false"},
    "reach": {"n_substeps": "64", "max_picard": "20", "snap": "true"},
    "run": {"seed": "0", "mode": "continuous", "modes": "1,2,10,100,inf,inf+U", "out_dir": "out"},
    "properties": {
        "runway_halfwidth": "10", "p1_min_percent": "0",
        "p2_p_lo": "-9", "p2_p_hi": "9", "p2_theta_lo_deg": "-10", "p2_theta_hi_deg": "10",
        "p2_max_steps": "30", "p2_threshold": "1.0",
    },
}


class ConfigError(ValueError):
    pass


def _bool(s: str, key: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {s!r}")


@dataclass
class RunConfig:
    values: dict[str, dict[str, str]]
    source: str = "<defaults>"

    # -- construction -------------------------------------------------------

    @classmethod
    def load(cls, path=None, overrides=()) -> RunConfig:
        values = {s: dict(kv) for s, kv in DEFAULTS.items()}
        source = "<defaults>"
        if path is not None:
            cp = configparser.ConfigParser(interpolation=None)
            cp.optionxform = str
            try:
                with open(path, encoding="utf-8") as fh:
                    cp.read_file(fh)
            except OSError as exc:
                raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
            except configparser.Error as exc:
                raise ConfigError(f"{path}: {exc}") from None
            for sec in cp.sections():
                for key, val in cp.items(sec):
                    cls._put(values, sec, key, val, str(path))
            source = str(path)
        for item in overrides:
            if "=" not in item or "." not in item.split("=", 1)[0]:
                raise ConfigError(f"--set expects section.key=value, got {item!r}")
            lhs, val = item.split("=", 1)
            sec, key = lhs.strip().split(".", 1)
            cls._put(values, sec, key, val.strip(), "--set")
        cfg = cls(values, source)
        cfg.validate()
        return cfg

    @staticmethod
    def _put(values, sec, key, val, where):
        if sec not in DEFAULTS:
            raise ConfigError(f"{where}: unknown section [{sec}] (known: {', '.join(DEFAULTS)})")
        if key not in DEFAULTS[sec]:
            raise ConfigError(f"{where}: unknown key {sec}.{key} (known: {', '.join(DEFAULTS[sec])})")
        values[sec][key] = val

    def get(self, sec: str, key: str) -> str:
        return self.values[sec][key]

    def f(self, sec: str, key: str) -> float:
        try:
            v = float(self.values[sec][key])
        except ValueError:
            raise ConfigError(f"{sec}.{key}: expected a number, got {self.values[sec][key]!r}") from None
        if not math.isfinite(v):
            raise ConfigError(f"{sec}.{key}: must be finite")
        return v

    def i(self, sec: str, key: str) -> int:
        try:
            return int(self.values[sec][key])
        except ValueError:
            raise ConfigError(f"{sec}.{key}: expected an integer, got {self.values[sec][key]!r}") from None

    def b(self, sec: str, key: str) -> bool:
        return _bool(self.values[sec][key], f"{sec}.{key}")

    def validate(self) -> None:
        """Build every derived object once so bad values fail early."""
        try:
            self.partition()
            self.plant()
            self.cat_config()
            self.p2_region()
            mode = self.get("run", "mode")
            if mode != "continuous":
                self.frequency()
            if self.get("controller", "kind") not in ("network", "analytic"):
                raise ConfigError("controller.kind must be 'network' or 'analytic'")
            hw = self.f("properties", "runway_halfwidth")
            if hw <= 0:
                raise ConfigError("properties.runway_halfwidth must be positive")
            if self.i("properties", "p2_max_steps") < 0:
                raise ConfigError("properties.p2_max_steps must be >= 0")
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    # -- derived objects ----------------------------------------------------

    def partition(self) -> Partition:
        p = (self.f("partition", "p_lo"), self.f("partition", "p_hi"))
        t = (math.radians(self.f("partition", "theta_lo_deg")), math.radians(self.f("partition", "theta_hi_deg")))
        if p[0] >= p[1] or t[0] >= t[1]:
            raise ConfigError("partition bounds must satisfy lo < hi")
        return Partition(Box.from_bounds([p, t]), (self.i("partition", "bins_p"), self.i("partition", "bins_theta")))

    def plant(self) -> PlantParams:
        return PlantParams(
            v=self.f("plant", "v"), L=self.f("plant", "L"),
            phi_limit=math.radians(self.f("plant", "phi_limit_deg")),
            tan_guard=math.radians(self.f("plant", "tan_guard_deg")),
        )

    def frequency(self) -> float | None:
        mode = self.get("run", "mode").strip().lower()
        if mode == "continuous":
            return None
        try:
            f = float(mode)
        except ValueError:
            raise ConfigError(f"run.mode must be 'continuous' or a frequency in Hz, got {mode!r}") from None
        if not f > 0:
            raise ConfigError("run.mode frequency must be positive")
        return f

    def cat_config(self) -> CatConfig:
        lin = LinearizeConfig(
            horizon=self.f("abstraction", "horizon"),
            n_start=self.i("abstraction", "n_start"),
            n_fit=self.i("abstraction", "n_fit"),
            n_audit=self.i("abstraction", "n_audit"),
            margin=self.f("abstraction", "margin"),
            floor=self.f("abstraction", "floor"),
            sim_substep=self.f("abstraction", "sim_substep"),
            seed=self.i("run", "seed"),
        )
        return CatConfig(
            linearize=lin,
            bf0=self.f("cat", "bf0"), inc=self.f("cat", "inc"),
            max_retries=self.i("cat", "max_retries"),
            n_substeps=self.i("reach", "n_substeps"), max_picard=self.i("reach", "max_picard"),
            frequency=self.frequency() if self.get("run", "mode").strip().lower() != "continuous" else None,
            snap=self.b("reach", "snap"),
            strict_paper=self.b("cat", "strict_paper"),
        )

    def control_source(self):
        if self.get("controller", "kind") == "analytic":
            return AnalyticLaw(self.f("controller", "kp"), self.f("controller", "ktheta"))
        latent = self.b("controller", "latent")
        spec = self.get("controller", "network")
        if spec == "builtin":
            path = surrogate_path()
            if latent:
                path = path.with_name("aats_surrogate_latent.json")
        else:
            path = Path(spec)
        net = load_network(path)
        box = None
        if latent:
            k = net.input_dim - 2
            if k < 1:
                raise ConfigError(f"{path} has no latent inputs")
            lo, hi = self.f("controller", "latent_lo"), self.f("controller", "latent_hi")
            box = Box.from_bounds([(lo, hi)] * k)
        return NeuralNet(net, box)

    def p2_region(self) -> tuple[tuple[float, float], tuple[float, float]]:
        p = (self.f("properties", "p2_p_lo"), self.f("properties", "p2_p_hi"))
        t = (math.radians(self.f("properties", "p2_theta_lo_deg")),
             math.radians(self.f("properties", "p2_theta_hi_deg")))
        if p[0] > p[1] or t[0] > t[1]:
            raise ConfigError("P2 initial region bounds must satisfy lo <= hi")
        return p, t

    def modes(self) -> list[str]:
        return [m.strip() for m in self.get("run", "modes").split(",") if m.strip()]

    def out_dir(self) -> Path:
        return Path(self.get("run", "out_dir"))

    def dumps(self) -> str:
        lines = []
        for sec in DEFAULTS:
            lines.append(f"[{sec}]")
            lines += [f"{k} = {self.values[sec][k]}" for k in DEFAULTS[sec]]
            lines.append("")
        return "\n".join(lines)

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()
