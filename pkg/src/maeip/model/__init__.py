"""CSformer architecture: config, parameters, blocks, network and checkpoints."""
