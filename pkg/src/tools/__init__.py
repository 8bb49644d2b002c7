# Clip data, augmentation, partitioning, evaluation and synthetic data
