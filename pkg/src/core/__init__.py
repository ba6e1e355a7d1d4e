"""Core engine: domain model, ingestion, index, retrieval stages and evaluation."""
