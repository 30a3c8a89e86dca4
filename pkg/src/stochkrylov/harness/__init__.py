"""Experiment harness: datasets, configuration, sweep drivers, and the CLI."""
