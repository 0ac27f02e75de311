"""Synthetic datasets and the on-disk dataset container."""

from .datasets import DatasetFile, load_dataset, save_dataset
from .physics import gen_bouncing
from .sprites import gen_sprites
from .strokes import gen_strokes

GENERATORS = {"sprites": gen_sprites, "bounce": gen_bouncing, "strokes": gen_strokes}

__all__ = ["GENERATORS", "DatasetFile", "gen_bouncing", "gen_sprites", "gen_strokes", "load_dataset", "save_dataset"]
