"""Run configuration: one JSON object with a fixed set of keys.

Unknown keys are rejected so that a mistyped security parameter cannot be
silently replaced by its default.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields, replace

from .finitesize import C_MODES, DELTA_MODES

OPTIMIZE = "optimize"


class ConfigError(ValueError):
    pass


def _number(name, value):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{name} must be a number")


@dataclass(frozen=True)
class RunConfig:
    protocol: str = "si"
    n_tot: int = 10**12
    epsilon: float = 1e-10
    p_d: float = 1e-8
    p_z: float = 0.5
    p_s: float = 0.5
    mu: float | str = OPTIMIZE
    p_sig: float | str = OPTIMIZE
    loss_db: float | tuple[float, float, float] = 0.0
    mode_c: str = "conservative"
    mode_delta: str = "derived"
    output: str | None = None

    def __post_init__(self):
        for name in ("epsilon", "p_d", "p_z", "p_s"):
            _number(name, getattr(self, name))
        if self.protocol not in ("si", "mdi"):
            raise ConfigError(f"protocol must be 'si' or 'mdi', not {self.protocol!r}")
        n = self.n_tot
        if isinstance(n, bool) or not isinstance(n, (int, float)) or not float(n).is_integer() or n <= 0:
            raise ConfigError("n_tot must be a positive integer")
        object.__setattr__(self, "n_tot", int(n))
        if not 0.0 < float(self.epsilon) < 1.0:
            raise ConfigError("epsilon must lie in (0, 1)")
        if not 0.0 <= float(self.p_d) < 1.0:
            raise ConfigError("p_d must lie in [0, 1)")
        for name in ("p_z", "p_s"):
            if not 0.0 < float(getattr(self, name)) < 1.0:
                raise ConfigError(f"{name} must lie in (0, 1)")
        if self.mu != OPTIMIZE:
            if isinstance(self.mu, str) or not float(self.mu) > 0:
                raise ConfigError("mu must be a positive number or 'optimize'")
            object.__setattr__(self, "mu", float(self.mu))
        if self.p_sig != OPTIMIZE:
            if isinstance(self.p_sig, str) or not 0.0 < float(self.p_sig) < 1.0:
                raise ConfigError("p_sig must lie in (0, 1) or be 'optimize'")
            object.__setattr__(self, "p_sig", float(self.p_sig))
        loss = self.loss_db
        if isinstance(loss, (list, tuple)):
            if len(loss) != 3:
                raise ConfigError("loss_db range must be [start, stop, step]")
            start, stop, step = (float(x) for x in loss)
            if not (step > 0 and stop >= start) or not all(map(math.isfinite, (start, stop, step))):
                raise ConfigError("loss_db range is empty")
            object.__setattr__(self, "loss_db", (start, stop, step))
        else:
            if isinstance(loss, str) or not math.isfinite(float(loss)) or float(loss) < 0:
                raise ConfigError("loss_db must be a nonnegative number or a range")
            object.__setattr__(self, "loss_db", float(loss))
        for name in ("epsilon", "p_d", "p_z", "p_s"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if self.mode_c not in C_MODES:
            raise ConfigError(f"mode_c must be one of {C_MODES}")
        if self.mode_delta not in DELTA_MODES:
            raise ConfigError(f"mode_delta must be one of {DELTA_MODES}")
        if self.output is not None and not isinstance(self.output, str):
            raise ConfigError("output must be a path string")

    def loss_points(self) -> list[float]:
        """Loss values in ascending order; a range includes its end point."""
        if isinstance(self.loss_db, tuple):
            start, stop, step = self.loss_db
            count = int(math.floor((stop - start) / step + 1e-9)) + 1
            return [round(start + k * step, 12) for k in range(count)]
        return [self.loss_db]

    def to_dict(self) -> dict:
        d = asdict(self)
        if isinstance(self.loss_db, tuple):
            d["loss_db"] = list(self.loss_db)
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"

    def with_updates(self, **kw) -> "RunConfig":
        try:
            return replace(self, **kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


FIELD_NAMES = tuple(f.name for f in fields(RunConfig))


def from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    unknown = sorted(set(data) - set(FIELD_NAMES))
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
    try:
        return RunConfig(**data)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None


def loads(text: str) -> RunConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from None
    return from_dict(data)


def load(path: str) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            return loads(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
