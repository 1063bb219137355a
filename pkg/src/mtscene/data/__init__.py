from .io import (
    dequantize_depth,
    import_pseudo_depth,
    load_split,
    quantize_depth,
    read_depth_png,
    read_manifest,
    read_sample,
    write_dataset,
    write_depth_png,
    write_sample,
)
from .synth import SceneConfig, Sample, SplitSpec, generate_dataset, generate_scene, sample_seed

__all__ = [
    "Sample",
    "SceneConfig",
    "SplitSpec",
    "dequantize_depth",
    "generate_dataset",
    "generate_scene",
    "import_pseudo_depth",
    "load_split",
    "quantize_depth",
    "read_depth_png",
    "read_manifest",
    "read_sample",
    "sample_seed",
    "write_dataset",
    "write_depth_png",
    "write_sample",
]
