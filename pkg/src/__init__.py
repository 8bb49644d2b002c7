"""
Tackle Augmentation Study - Source Package

Risky-tackle detection experiments: an L18 schedule of augmentation runs,
stratified cross-validation with leakage-free minority balancing, and a
numpy video transformer trained with focal loss.

This package provides:
- Clip storage, FPOC localization and synthetic data generation
- Deterministic augmentation and fold balancing
- Training, threshold selection and fold-aggregated evaluation
- A command-line interface and report writers
"""

__version__ = "0.3.0"
__description__ = "Risky-tackle detection with designed augmentation experiments"

__all__ = [
    "core",
    "interfaces",
    "tools",
    "utils",
]

# Package metadata recorded in every results file
__package_info__ = {
    "name": "tackle-augmentation-study",
    "version": __version__,
    "description": __description__,
    "python_requires": ">=3.10",
}
