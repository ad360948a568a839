"""Arbitrary-resolution inference: padding plans, MAC accounting and the inference entry points."""
