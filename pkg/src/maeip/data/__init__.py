"""Image I/O, synthetic degradations and quality metrics."""
