"""Experiment configuration: defaults, JSON persistence and flag overrides."""

import json
from dataclasses import asdict, dataclass, field, fields, replace

from ..errors import ValidationError
from ..ofdm import OfdmConfig
from ..ray.cir import ArrayConfig, ReceiverChain
from ..ray.scene import PerturbationConfig
from ..twin.corrector import CorrectorConfig

SCENARIOS = ("ray_count_study", "material_study", "corrector_study")
TIERS = {"LF": 1000, "MF": 10000, "HF": 100000}
DESK_TIERS = {"LF": 100, "MF": 1000, "HF": 10000}
REFERENCE_RAYS = 1000000


@dataclass
class ExperimentConfig:
    """Everything a study needs; see ``scenario_defaults`` and the README key list."""

    scenario: str = "ray_count_study"
    scene: str = None  # scene file; None uses the bundled demo scene
    material_choice: str = "MC1"  # materials of the truth scene (and of the twin unless overridden)
    twin_materials: list = field(default_factory=lambda: ["MC1"])
    snr_db: list = field(default_factory=lambda: [0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0])
    bits_per_point: int = 1000000
    trials: int = 1
    positions: int = 100  # receiver positions per BER point (and per NMSE mean)
    precoders: list = field(default_factory=lambda: ["mmse"])
    normalization: str = "unit_power"
    tiers: dict = field(default_factory=lambda: dict(TIERS))
    reference_rays: int = REFERENCE_RAYS
    max_reflections: int = 3
    subcarriers: int = 128
    cp_length: int = 16
    sample_rate: float = 30.72e6
    modulation: str = "qpsk"
    n_tx: int = 4
    taps: int = 16
    perturbation: dict = field(default_factory=lambda: asdict(ORACLE_PERTURBATION))
    receiver_chain: dict = field(default_factory=lambda: asdict(ORACLE_CHAIN))
    dataset_positions: int = 3000
    split: float = 0.7
    corrector: dict = field(default_factory=lambda: asdict(CorrectorConfig()))
    seed: int = 0
    output: str = "results.csv"
    dataset: str = "dataset.ctwd"
    checkpoint: str = "corrector.ctwm"
    mlp_checkpoint: str = "mlp.ctwm"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.scenario not in SCENARIOS:
            raise ValidationError(f"unknown scenario {self.scenario!r}; expected one of {SCENARIOS}")
        if not self.snr_db:
            raise ValidationError("snr_db must not be empty")
        if self.trials < 1:
            raise ValidationError("trials must be at least 1")
        if self.bits_per_point < 1 or self.positions < 1:
            raise ValidationError("bits_per_point and positions must be positive")
        if not self.tiers:
            raise ValidationError("at least one fidelity tier is required")
        for name in ("precoders",):
            for p in getattr(self, name):
                if p not in ("mrt", "mmse", "mmse_as_printed"):
                    raise ValidationError(f"unknown precoder {p!r}")
        if self.normalization not in ("paper_literal", "unit_power"):
            raise ValidationError(f"unknown normalization {self.normalization!r}")
        # typed sub-configs validate themselves
        self.ofdm_config(), self.array_config(), self.chain(), self.perturbation_config(), self.corrector_config()

    # typed views ---------------------------------------------------------
    def ofdm_config(self):
        return OfdmConfig(self.subcarriers, self.cp_length, self.sample_rate, self.modulation)

    def array_config(self):
        return ArrayConfig(n_tx=self.n_tx)

    def chain(self):
        return ReceiverChain(**self.receiver_chain) if self.receiver_chain else None

    def perturbation_config(self):
        p = dict(self.perturbation)
        for key in ("clutter_size_range", "clutter_materials"):
            if key in p:
                p[key] = tuple(p[key])
        return PerturbationConfig(**p)

    def corrector_config(self):
        c = dict(self.corrector)
        if "channels" in c:
            c["channels"] = tuple(c["channels"])
        return CorrectorConfig(**c)

    # persistence ---------------------------------------------------------
    def to_dict(self):
        return json.loads(json.dumps(asdict(self)))

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValidationError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}: invalid JSON: {exc}") from None
        return cls.from_dict(data)

    def override(self, assignments):
        """Apply ``key=value`` strings; values are parsed as JSON, falling back to plain strings."""
        changes = {}
        known = {f.name for f in fields(self)}
        for item in assignments:
            if "=" not in item:
                raise ValidationError(f"override {item!r} is not key=value")
            key, raw = item.split("=", 1)
            if key not in known:
                raise ValidationError(f"unknown config key {key!r}")
            try:
                changes[key] = json.loads(raw)
            except json.JSONDecodeError:
                changes[key] = raw
        return replace(self, **changes)


# The synthetic "real world": a perturbed copy of the scene, traced at the
# reference ray count and captured through a band-limited receiver.
ORACLE_PERTURBATION = PerturbationConfig(clutter_count=10, material_jitter=0.1, geometry_jitter=0.1, seed=11)
ORACLE_CHAIN = ReceiverChain(bandwidth=30.72e6, timing_advance=2)

# corrector study: 24,000 realizations, about two passes over the fitting rows per epoch
CORRECTOR_POSITIONS = 6000
CORRECTOR_BATCHES = 132


def scenario_defaults(scenario="ray_count_study", desk=False):
    """Defaults per study.

    The ray-count study runs both precoders; the material and corrector
    studies use MMSE only. ``desk=True`` selects the reduced tier ladder.
    """
    if scenario not in SCENARIOS:
        raise ValidationError(f"unknown scenario {scenario!r}")
    cfg = ExperimentConfig(scenario=scenario)
    if desk:
        cfg.tiers = dict(DESK_TIERS)
    if scenario == "ray_count_study":
        cfg.precoders = ["mrt", "mmse"]
        cfg.receiver_chain = {}
        cfg.perturbation = asdict(PerturbationConfig())
    elif scenario == "material_study":
        cfg.twin_materials = ["MC1", "MC2", "MC3"]
        cfg.tiers = {"HF": cfg.tiers["HF"]}
        cfg.receiver_chain = {}
    else:
        cfg.dataset_positions = CORRECTOR_POSITIONS
        cfg.corrector = dict(cfg.corrector, batches_per_epoch=CORRECTOR_BATCHES)
    cfg.validate()
    return cfg
