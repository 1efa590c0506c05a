"""Configuration, experiment orchestration, verification suites and the CLI."""
