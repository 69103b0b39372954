"""sciforge: staged agentic engine for task-conditioned scientific data preparation.

Four coordinated stages — data access, intent parsing, processing,
integration — turn a natural-language request plus a raw dataset directory
into a validated, integrated dataset with full provenance.
"""

__version__ = "0.1.0"
