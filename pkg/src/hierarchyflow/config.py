"""Model configuration: block layout, variant presets, derived channel chain."""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ConfigurationError

# Named variants and their per-block channel expansion rates.
VARIANT_EXPANSIONS = {
    "HF": [10, 4],
    "HF+": [4, 5, 2],
    "HF++": [10, 4, 4],
    "HF†": [10, 4, 4, 4],
}

# ASCII-friendly spellings accepted on the command line.
VARIANT_ALIASES = {
    "HFt": "HF†",
    "HFdag": "HF†",
}

DEFAULT_STYLE_WIDTHS = (32, 64, 128, 256)

# Affine-net hidden widths follow the 2x/4x doubling rule but are capped so
# deep variants stay within their parameter budget.
AFFINE_HIDDEN_CAP = 128


def canonical_variant(name: str) -> str:
    name = VARIANT_ALIASES.get(name, name)
    if name not in VARIANT_EXPANSIONS:
        known = ", ".join(sorted(VARIANT_EXPANSIONS) + sorted(VARIANT_ALIASES))
        raise ConfigurationError(f"unknown variant {name!r}; expected one of: {known}")
    return name


@dataclass(frozen=True)
class BlockSpec:
    """One hierarchical coupling block: channel count in, expansion rate out."""

    input_channels: int
    expansion: int

    def __post_init__(self):
        if self.input_channels < 1:
            raise ConfigurationError(f"input_channels must be positive, got {self.input_channels}")
        if self.expansion < 2:
            raise ConfigurationError(f"expansion must be >= 2, got {self.expansion}")

    @property
    def output_channels(self) -> int:
        return self.input_channels * self.expansion


@dataclass(frozen=True)
class ModelConfig:
    """Full model layout: ordered blocks plus the style-encoder trunk widths."""

    blocks: tuple[BlockSpec, ...]
    variant: str | None = None
    image_channels: int = 3
    style_widths: tuple[int, ...] = DEFAULT_STYLE_WIDTHS
    affine_hidden_cap: int = AFFINE_HIDDEN_CAP

    def __post_init__(self):
        if not self.blocks:
            raise ConfigurationError("model needs at least one block")
        if self.blocks[0].input_channels != self.image_channels:
            raise ConfigurationError(
                f"first block expects {self.blocks[0].input_channels} channels, "
                f"images have {self.image_channels}"
            )
        for prev, cur in zip(self.blocks, self.blocks[1:]):
            if cur.input_channels != prev.output_channels:
                raise ConfigurationError(
                    f"block chain broken: {prev.output_channels} -> {cur.input_channels}"
                )
        if len(self.style_widths) < 1:
            raise ConfigurationError("style trunk needs at least one width")

    @property
    def expansions(self) -> tuple[int, ...]:
        return tuple(b.expansion for b in self.blocks)

    @property
    def block_output_channels(self) -> tuple[int, ...]:
        return tuple(b.output_channels for b in self.blocks)

    @property
    def output_channels(self) -> int:
        return self.blocks[-1].output_channels

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "expansions": list(self.expansions),
            "image_channels": self.image_channels,
            "style_widths": list(self.style_widths),
            "affine_hidden_cap": self.affine_hidden_cap,
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        return make_config(
            expansions=d["expansions"],
            variant=d.get("variant"),
            image_channels=d.get("image_channels", 3),
            style_widths=tuple(d.get("style_widths", DEFAULT_STYLE_WIDTHS)),
            affine_hidden_cap=d.get("affine_hidden_cap", AFFINE_HIDDEN_CAP),
        )


def make_config(
    expansions,
    variant: str | None = None,
    image_channels: int = 3,
    style_widths=DEFAULT_STYLE_WIDTHS,
    affine_hidden_cap: int = AFFINE_HIDDEN_CAP,
) -> ModelConfig:
    """Build a ModelConfig from an expansion list, deriving the channel chain."""
    blocks = []
    channels = image_channels
    for n in expansions:
        blocks.append(BlockSpec(channels, int(n)))
        channels *= int(n)
    return ModelConfig(
        blocks=tuple(blocks),
        variant=variant,
        image_channels=image_channels,
        style_widths=tuple(style_widths),
        affine_hidden_cap=affine_hidden_cap,
    )


def variant_config(name: str) -> ModelConfig:
    """Preset configuration for a named variant (HF, HF+, HF++, HF-dagger)."""
    name = canonical_variant(name)
    return make_config(VARIANT_EXPANSIONS[name], variant=name)


def mini_config(expansions=(2, 2), style_widths=(8, 8, 8, 8)) -> ModelConfig:
    """Tiny configuration for gradient checks and fast tests."""
    return make_config(expansions, variant=None, style_widths=style_widths)
