# Standalone helpers: synthetic datasets and trec run export.
