"""Repeated-split evaluation harness and synthetic data generation."""
