"""Export real ViT embeddings into EMB1 shards for the plotgrid pipeline.

The adapter is a pure exporter: it runs a pretrained backbone over a
directory of images and writes the CLS vector (kind cls768) or the raw
patch-token matrix (kind tokens_raw) per image. It computes no transforms
or classification of its own; downstream math stays in one place.
"""

from extractor_adapter.export import AdapterConfig, AdapterError, extract_shard

__all__ = ["AdapterConfig", "AdapterError", "extract_shard"]
__version__ = "0.1.0"
