"""
Services package for the CrowdAttr toolkit.

Each module encapsulates one part of the detection pipeline: box geometry,
attribute embeddings, training targets, losses, NMS, decoding, evaluation
and synthetic benchmarks.
"""
