"""Pipeline configuration: presets, INI-style config files, flag overrides.

Config files are plain-text key=value pairs under section headers (the
sections below). Command-line flags win over file values, which win over the
preset. The fully-resolved configuration is written into every run
directory.
"""

import configparser
import dataclasses
import io
from dataclasses import dataclass, field

from .errors import ConfigError

PRESETS = ("desk", "paper")


@dataclass
class CorpusConfig:
    languages: list = field(default_factory=lambda: ["l1", "l2", "l3"])
    phones_per_language: int = 8
    states_per_phone: int = 1
    utterances_per_language: int = 18
    min_phones: int = 6
    max_phones: int = 10
    min_frames_per_state: int = 4
    max_frames_per_state: int = 10
    wave_amplitude: float = 0.35
    wave_noise_level: float = 0.15
    cs_utterances: int = 24


@dataclass
class FeatureConfig:
    sample_rate_hz: int = 16000
    augment: bool = False  # three-fold speed perturbation at 0.9/1.0/1.1


@dataclass
class UbmConfig:
    num_comp: int = 8
    iters: int = 6


@dataclass
class IvectorConfig:
    dim: int = 10
    iters: int = 5


@dataclass
class AlignerConfig:
    iters: int = 6
    num_comp: int = 1
    use_pitch: bool = True  # append pitch3 to mfcc13dd for alignment


@dataclass
class NetConfig:
    hidden_dim: int = 64
    num_hidden: int = 3
    bottleneck_dim: int = 8
    epochs: int = 12
    batch_size: int = 128
    learning_rate: float = 0.08
    decay: float = 0.92
    sampling: str = "proportional"


@dataclass
class ProbeConfig:
    epochs: int = 30
    batch_size: int = 256
    learning_rate: float = 0.5
    train_fraction: float = 0.75


@dataclass
class ScoreConfig:
    sub_rate: float = 0.15
    del_rate: float = 0.05
    ins_rate: float = 0.05


@dataclass
class PipelineConfig:
    preset: str = "desk"
    seed: int = 0
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    ubm: UbmConfig = field(default_factory=UbmConfig)
    ivector: IvectorConfig = field(default_factory=IvectorConfig)
    aligner: AlignerConfig = field(default_factory=AlignerConfig)
    net: NetConfig = field(default_factory=NetConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    score: ScoreConfig = field(default_factory=ScoreConfig)

    _SECTIONS = ("corpus", "features", "ubm", "ivector", "aligner", "net", "probe", "score")


def paper_preset():
    """Corpus-scale geometry: 9 languages, 1024x6 hidden stack, 100-dim
    i-vectors, 39-dim bottleneck (80 is the documented alternative)."""
    cfg = PipelineConfig(preset="paper")
    cfg.corpus = CorpusConfig(
        languages=["nbl", "nso", "sot", "ssw", "tsn", "tso", "ven", "xho", "zul"],
        phones_per_language=30,
        states_per_phone=3,
        utterances_per_language=200,
        min_phones=8,
        max_phones=16,
    )
    cfg.ubm = UbmConfig(num_comp=64, iters=10)
    cfg.ivector = IvectorConfig(dim=100, iters=5)
    cfg.aligner = AlignerConfig(iters=10, num_comp=4)
    cfg.net = NetConfig(hidden_dim=1024, num_hidden=6, bottleneck_dim=39, epochs=20)
    return cfg


def from_preset(name):
    if name == "desk":
        return PipelineConfig(preset="desk")
    if name == "paper":
        return paper_preset()
    raise ConfigError(f"unknown preset {name!r}; choose from {PRESETS}")


_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


def _parse_value(raw, current):
    if isinstance(current, bool):
        low = raw.strip().lower()
        if low in _BOOL_TRUE:
            return True
        if low in _BOOL_FALSE:
            return False
        raise ConfigError(f"expected a boolean, got {raw!r}")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, list):
        return [item.strip() for item in raw.split(",") if item.strip()]
    return raw.strip()


def apply_config_file(cfg, path):
    """Overlay key=value sections from an INI-style file onto cfg."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    for section in parser.sections():
        if section == "run":
            for key, raw in parser.items(section):
                if key == "seed":
                    cfg.seed = int(raw)
                elif key == "preset":
                    pass  # preset selection happens before the file is read
                else:
                    raise ConfigError(f"unknown key [run] {key}")
            continue
        if section not in PipelineConfig._SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        sub = getattr(cfg, section)
        for key, raw in parser.items(section):
            if not hasattr(sub, key):
                raise ConfigError(f"unknown key [{section}] {key}")
            try:
                setattr(sub, key, _parse_value(raw, getattr(sub, key)))
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: {exc}") from exc
    return cfg


def read_preset_name(path):
    """Peek at [run] preset in a config file, defaulting to "desk"."""
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise ConfigError(f"config file not found: {path}")
    return parser.get("run", "preset", fallback="desk")


def resolve(config_path=None, preset=None, seed=None):
    """Preset -> config file -> flags, later layers winning."""
    name = preset or (read_preset_name(config_path) if config_path else "desk")
    cfg = from_preset(name)
    if config_path:
        apply_config_file(cfg, config_path)
    if seed is not None:
        cfg.seed = int(seed)
    return cfg


def dump_config(cfg):
    """Serialize the resolved configuration as INI text."""
    parser = configparser.ConfigParser()
    parser["run"] = {"preset": cfg.preset, "seed": str(cfg.seed)}
    for section in PipelineConfig._SECTIONS:
        sub = getattr(cfg, section)
        parser[section] = {}
        for f in dataclasses.fields(sub):
            value = getattr(sub, f.name)
            if isinstance(value, list):
                parser[section][f.name] = ",".join(str(v) for v in value)
            else:
                parser[section][f.name] = str(value)
    out = io.StringIO()
    parser.write(out)
    return out.getvalue()


def synth_config(cfg):
    """Build the generator SynthConfig from a PipelineConfig."""
    from .corpus import LanguageSpec, SynthConfig, make_phoneset

    specs = []
    for i, code in enumerate(cfg.corpus.languages):
        specs.append(
            LanguageSpec(
                phoneset=make_phoneset(
                    code, i, cfg.corpus.phones_per_language, cfg.corpus.states_per_phone
                ),
                num_utterances=cfg.corpus.utterances_per_language,
                min_phones=cfg.corpus.min_phones,
                max_phones=cfg.corpus.max_phones,
            )
        )
    return SynthConfig(
        languages=specs,
        min_frames_per_state=cfg.corpus.min_frames_per_state,
        max_frames_per_state=cfg.corpus.max_frames_per_state,
        seed=cfg.seed,
        sample_rate_hz=cfg.features.sample_rate_hz,
        wave_amplitude=cfg.corpus.wave_amplitude,
        wave_noise_level=cfg.corpus.wave_noise_level,
    )
