"""docrefinery: refines streams of unstructured documents into validated structured records.

The pipeline runs in four stages: collect raw documents from configured
sources, discard semantic near-duplicates via embedding similarity, extract
a schema-shaped record with an LLM provider, and validate the result with a
multi-replica self-consistency check plus formal rule checks before it is
persisted or queued for manual review.
"""

__version__ = "0.1.0"
