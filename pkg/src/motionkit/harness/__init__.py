"""Experiment orchestration: splits, training, transfer experiments,
aggregation, fine-tuning and the synthetic benchmark."""
