"""Model and run configuration as plain key = value text with full defaults."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path


@dataclass(frozen=True)
class ModelConfig:
    # spectral classifier
    d_s: int = 64
    heads: int = 4
    enc_layers: int = 2
    dec_layers: int = 2
    ffn_mult: int = 2
    patch_size: int = 64
    max_formula_tokens: int = 24
    # geometric autoencoder and denoiser
    d_h: int = 16
    d_edge: int = 16
    egnn_hidden: int = 64
    encoder_layers: int = 1
    decoder_layers: int = 4
    denoiser_layers: int = 4
    cross_layers: int = 4
    cross_heads: int = 4
    t_dim: int = 32
    sigma0: float = 0.01
    lambda_kl: float = 1e-4
    # diffusion
    steps: int = 100
    elements: tuple[str, ...] = ("H", "C", "N", "O", "F")


FULL_SCALE = ModelConfig(d_s=512, heads=8, enc_layers=4, dec_layers=4, egnn_hidden=256,
                         decoder_layers=9, denoiser_layers=9, steps=1000)


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    seed: int = 0
    batch_size: int = 10
    classifier_steps: int = 400
    ae_steps: int = 300
    ldm_steps: int = 3000
    lr_base: float = 1.0
    warmup: int = 3000
    lr_model_dim: int = 512
    lr_max: float = 3e-3
    clip: float = 1.0
    samples_per_spectrum: int = 50
    log_every: int = 10


def _coerce(kind, text: str):
    if kind in (int, "int"):
        return int(text)
    if kind in (float, "float"):
        return float(text)
    if kind in (str, "str"):
        return text
    if str(kind).startswith("tuple"):
        return tuple(s.strip() for s in text.split(",") if s.strip())
    raise TypeError(f"unsupported config type {kind}")


def _flat(cfg: RunConfig) -> dict[str, object]:
    out: dict[str, object] = {}
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if dataclasses.is_dataclass(value):
            for g in fields(value):
                out[f"model.{g.name}"] = getattr(value, g.name)
        else:
            out[f.name] = value
    return out


def dumps(cfg: RunConfig) -> str:
    lines = []
    for key, value in _flat(cfg).items():
        if isinstance(value, tuple):
            value = ",".join(value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def loads(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse ``key = value`` lines; unknown keys are errors, missing keys keep defaults."""
    base = base or RunConfig()
    run_types = {f.name: f.type for f in fields(RunConfig)}
    model_types = {f.name: f.type for f in fields(ModelConfig)}
    run_updates, model_updates = {}, {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key.startswith("model."):
            name = key[6:]
            if name not in model_types:
                raise ValueError(f"config line {n}: unknown key {key!r}")
            model_updates[name] = _coerce(model_types[name], value)
        elif key in run_types and key != "model":
            run_updates[key] = _coerce(run_types[key], value)
        else:
            raise ValueError(f"config line {n}: unknown key {key!r}")
    model = dataclasses.replace(base.model, **model_updates)
    return dataclasses.replace(base, model=model, **run_updates)


PRESETS = ("toy_overfit",)


def preset(name: str) -> RunConfig:
    """A configuration shipped with the package, e.g. ``toy_overfit``."""
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return loads((Path(__file__).parent / "data" / f"{name}.cfg").read_text())


def load(path: str | Path | None) -> RunConfig:
    """Read a config file; a bare preset name selects the packaged preset."""
    if path is None:
        return RunConfig()
    if str(path) in PRESETS and not Path(path).exists():
        return preset(str(path))
    return loads(Path(path).read_text())
