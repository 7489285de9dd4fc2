"""Knowledge-masked pretraining data pipeline for Chinese biomedical text.

The pipeline mines biomedical entities and phrases, annotates coarse-to-fine
masking units (entity > span > character) in a corpus, and deterministically
generates whole-unit masked language-model examples with next-sentence pairs.
A miniature gradient-checked encoder verifies the output is trainable.
"""

__version__ = "0.1.0"
