"""Named model configurations.

The four encoder/recurrent pairings are scaled down for CPU use.  The input
sizes and sequence lengths they stand in for are kept on each preset as
``paper_points`` / ``paper_horizon`` and are not used by the desk runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .nn import ModelConfig, SteeringModel


@dataclass(frozen=True)
class Preset:
    name: str
    model: ModelConfig
    k: int = 8
    keep_ratio: float = 1.0
    points_per_frame: int = 256
    horizon: int = 4
    paper_points: int | None = None
    paper_horizon: int | None = None
    notes: str = field(default="", compare=False)

    @property
    def uses_graph(self) -> bool:
        return self.model.encoder == "gcn"


_PNPP_LEVELS = ((64, 2.0, 16, (16, 16)), (16, 5.0, 16, (32, 32)))

PRESETS: dict[str, Preset] = {
    p.name: p
    for p in (
        Preset("pnpp-lstm", ModelConfig(encoder="pnpp", recurrent="lstm", sa_levels=_PNPP_LEVELS),
               paper_points=45_000, paper_horizon=6),
        Preset("pnpp-ncp", ModelConfig(encoder="pnpp", recurrent="ltc", sa_levels=_PNPP_LEVELS),
               paper_points=45_000, paper_horizon=6),
        Preset("gnn-lstm", ModelConfig(encoder="gcn", recurrent="lstm"),
               paper_points=50_000, paper_horizon=8),
        Preset("gnn-ncp", ModelConfig(encoder="gcn", recurrent="ltc"),
               paper_points=43_000, paper_horizon=8),
        Preset("sa-gnn-ncp", ModelConfig(encoder="gcn", recurrent="ltc"), keep_ratio=0.2,
               notes="semantic-aware pruning: all same-class edges, 20% of inter-class edges"),
    )
}

# input size / sequence length of the full-scale configurations, documentation only
PAPER_TABLE = {
    "cnn-ncp": ("192x640 pixels", 16),
    "pnpp-lstm": (45_000, 6),
    "pnpp-ncp": (45_000, 6),
    "gnn-lstm": (50_000, 8),
    "gnn-ncp": (43_000, 8),
}


def get_preset(name: str) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; valid presets: {', '.join(sorted(PRESETS))}") from None


def build_model(preset: str | Preset, seed: int | None = None) -> SteeringModel:
    p = get_preset(preset) if isinstance(preset, str) else preset
    cfg = p.model if seed is None else replace(p.model, seed=seed)
    return SteeringModel(cfg, preset=p.name)
