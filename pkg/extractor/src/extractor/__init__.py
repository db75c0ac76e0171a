"""Companion tools for the whitened-distance pipeline.

Two standalone generators that produce the pipeline's input format
(NPY feature tensors + mask/image PNGs + a manifest JSON):

- ``extractor.extract``: dump per-stage CNN features of a real image dataset.
- ``extractor.gen_fixture``: synthesize Gaussian features with planted,
  analytically characterized anomalies.

Submodules are imported explicitly (``from extractor.extract import ...``)
so fixture generation does not pay the torch import cost.
"""

__version__ = "0.1.0"

__all__ = ["extract", "gen_fixture"]
