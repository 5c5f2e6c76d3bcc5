"""Benchmark toolkit for mobile-ready transfer-learning strategies.

Implements two training approaches (a two-phase fine-tuning schedule and a
weight-drift-penalized full fine-tune), two augmentation policies,
int8/FP16 precision-optimization simulation, a four-scenario robustness
protocol, an inference timing protocol, and the paired nonparametric
statistics used to compare strategies.
"""

__version__ = "0.1.0"
