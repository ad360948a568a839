"""Fine-tuning harness: optimiser, schedule, Charbonnier loss and augmentation."""
