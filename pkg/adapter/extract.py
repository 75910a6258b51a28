#!/usr/bin/env python3
"""Entry point for the embedding exporter; logic lives in extractor_adapter."""

from extractor_adapter.cli import main

if __name__ == "__main__":
    main()
