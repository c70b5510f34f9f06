from .dataset import PatchPair, batches, make_pairs, read_manifest, synth_dataset
from .png import ImageRGB, PNGError, UnsupportedPNG, load_png, save_png
from .resize import bicubic_resize

__all__ = [
    "ImageRGB", "PNGError", "PatchPair", "UnsupportedPNG", "batches", "bicubic_resize", "load_png",
    "make_pairs", "read_manifest", "save_png", "synth_dataset",
]
