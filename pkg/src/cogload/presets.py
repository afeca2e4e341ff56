"""The seven named systems combined by the ensemble."""

from dataclasses import dataclass

from .errors import ConfigError


@dataclass(frozen=True)
class SystemPreset:
    name: str
    grouping: str
    sma_window: int


PRESETS = {
    p.name: p
    for p in (
        SystemPreset("sd31-SMA16", "sd31", 16),
        SystemPreset("avgP25-SMA16", "avgP25", 16),
        SystemPreset("maxP25-SMA16", "maxP25", 16),
        SystemPreset("avgP21-SMA16", "avgP21", 16),
        SystemPreset("maxP21-SMA16", "maxP21", 16),
        SystemPreset("avgP21-SMA20", "avgP21", 20),
        SystemPreset("maxP21-SMA20", "maxP21", 20),
    )
}
ENSEMBLE_PRESETS = tuple(PRESETS)
BEST_SINGLE = "maxP21-SMA16"


def get_preset(name):
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)} or 'custom'") from None
