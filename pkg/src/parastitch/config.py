"""Run configuration: defaults, flat key=value files, and flag overlays."""

from __future__ import annotations

from dataclasses import dataclass, field, fields

from .errors import DecodeError


@dataclass
class RunConfig:
    lam: float = 20.0
    beta: float = 10.0
    gamma: float = 200.0
    nu: float = 5.0
    min_remaining: int = 50
    ransac_threshold: float = 3.0
    sampson_eps: float = 3.0
    cell_size: int = 20
    r1: int = 50
    r2: int = 50
    seed: int = 0
    blend_mode: str = "feather"  # feather | constant
    use_initial_models: bool = False  # ablation: label with the RANSAC init H0
    neighborhood_no_sam: bool = False  # ablation: Delaunay-only neighborhood
    disable_error_buffer: bool = False  # ablation: last-writer-wins claiming
    force_single_model: bool = False  # baseline: single global homography

    def __post_init__(self):
        for name in ("lam", "beta", "gamma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        for name in ("nu", "ransac_threshold", "sampson_eps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("min_remaining", "cell_size", "r1", "r2"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.blend_mode not in ("feather", "constant"):
            raise ValueError("blend_mode must be 'feather' or 'constant'")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


# file keys use the CLI spelling; 'lambda' maps onto the lam attribute
_KEY_ALIASES = {"lambda": "lam"}
_BOOL_FIELDS = {
    "use_initial_models",
    "neighborhood_no_sam",
    "disable_error_buffer",
    "force_single_model",
}


def parse_config_file(path: str) -> dict:
    """Flat key=value lines; '#' comments; returns a typed override dict."""
    out = {}
    try:
        with open(path) as fh:
            for ln, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise DecodeError(f"{path}:{ln}: expected key=value")
                key, val = (s.strip() for s in line.split("=", 1))
                key = _KEY_ALIASES.get(key, key)
                out[key] = val
    except OSError as exc:
        raise DecodeError(f"cannot read config: {path}") from exc
    return out


def build_config(file_path: str | None = None, **overrides) -> RunConfig:
    """Defaults, then file values, then explicit (non-None) overrides."""
    values: dict = {}
    if file_path:
        raw = parse_config_file(file_path)
        valid = {f.name: f.type for f in fields(RunConfig)}
        for key, sval in raw.items():
            if key not in valid:
                raise DecodeError(f"unknown config key: {key}")
            if key in _BOOL_FIELDS:
                values[key] = sval.lower() in ("1", "true", "yes", "on")
            elif key in ("min_remaining", "cell_size", "r1", "r2", "seed"):
                values[key] = int(sval)
            elif key == "blend_mode":
                values[key] = sval
            else:
                values[key] = float(sval)
    for key, val in overrides.items():
        if val is not None:
            values[key] = val
    return RunConfig(**values)
