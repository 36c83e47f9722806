"""Few-shot acoustic classification harness.

Offline spectrogram pipeline, reproducible class-disjoint splits, episodic
task samplers (single-dataset and joint multi-dataset), a CRNN backbone,
five few-shot learners, and a confidence-interval evaluation protocol —
all runnable end-to-end on a built-in synthetic corpus.
"""

__version__ = "0.1.0"
