"""Run configuration: every tunable default in one place.

Configs are flat ``key = value`` text (dots group related keys).  Unknown
keys are hard errors, and the effective config is echoed into every output
directory so runs are reconstructible.
"""

from __future__ import annotations

from pathlib import Path

from .training import Schedule, TrainSettings


class ConfigError(ValueError):
    """Unknown key or unparsable value."""


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key -> (default, parser)
_SCHEMA: dict[str, tuple] = {
    "sample_rate": (22050, int),
    "window": (2048, int),
    "hop": (1536, int),
    "mels": (256, int),
    "freq_mode": ("fraction", str),
    "base_width": (128, int),
    "batch_size": (32, int),
    "eval_batch_size": (256, int),
    "epochs": (350, int),
    "lr_start": (1e-4, float),
    "lr_end": (5e-6, float),
    "decay_start": (50, int),
    "decay_end": (250, int),
    "mixup.enabled": (False, _parse_bool),
    "mixup.alpha": (0.3, float),
    "roll.enabled": (False, _parse_bool),
    "snapshot_k": (25, int),
    "last_k": (25, int),
}


class Config:
    """Typed flat configuration with explicit-override tracking.

    The learning-rate decay breakpoints follow the canonical 50/250/350
    proportions when ``epochs`` changes, unless ``decay_start``/``decay_end``
    are set explicitly.
    """

    def __init__(self):
        self._values = {key: default for key, (default, _) in _SCHEMA.items()}
        self._explicit: set[str] = set()

    def __getitem__(self, key: str):
        try:
            return self._values[key]
        except KeyError:
            raise ConfigError(f"unknown config key {key!r}") from None

    def set(self, key: str, value) -> None:
        if key not in _SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        parser = _SCHEMA[key][1]
        if isinstance(value, str):
            try:
                value = parser(value)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}: {exc}") from None
        self._values[key] = value
        self._explicit.add(key)

    def update_from_file(self, path) -> None:
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            try:
                self.set(key, value)
            except ConfigError as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from None
        # file-level sanity: breakpoints must fit in the epoch budget
        if self["decay_end"] > self["epochs"] and "decay_end" in self._explicit:
            raise ConfigError("decay_end exceeds epochs")

    def schedule(self) -> Schedule:
        if {"decay_start", "decay_end"} & self._explicit:
            return Schedule(
                lr_start=self["lr_start"],
                lr_end=self["lr_end"],
                decay_start=self["decay_start"],
                decay_end=self["decay_end"],
                total_epochs=self["epochs"],
            )
        if self["epochs"] == 350:
            return Schedule(lr_start=self["lr_start"], lr_end=self["lr_end"])
        return Schedule.scaled(self["epochs"], self["lr_start"], self["lr_end"])

    def train_settings(self, seed: int = 0) -> TrainSettings:
        return TrainSettings(
            schedule=self.schedule(),
            batch_size=self["batch_size"],
            eval_batch_size=self["eval_batch_size"],
            mixup_enabled=self["mixup.enabled"],
            mixup_alpha=self["mixup.alpha"],
            roll_enabled=self["roll.enabled"],
            seed=seed,
        )

    def to_text(self, version: str = "", extra: dict | None = None) -> str:
        lines = []
        if version:
            lines.append(f"version = {version}")
        for key in sorted(self._values):
            lines.append(f"{key} = {self._values[key]}")
        for key in sorted(extra or {}):
            lines.append(f"{key} = {extra[key]}")
        return "\n".join(lines) + "\n"

    def echo(self, directory, version: str = "", extra: dict | None = None) -> None:
        """Write the effective config (plus tool version and any run
        parameters) into an output directory."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "config.txt").write_text(self.to_text(version, extra))
