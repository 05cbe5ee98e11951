"""Line-level corpus quality tooling.

Pipeline stages: ingest documents into line records, label lines through an
LLM endpoint with a dynamic label registry, refine labels into nine quality
categories, train a calibrated line classifier, and threshold-filter corpora
on per-line quality scores.
"""

__version__ = "0.1.0"
