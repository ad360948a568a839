"""MAEIP pre-training: patch masking, encoder head, losses and the stage schedule."""
