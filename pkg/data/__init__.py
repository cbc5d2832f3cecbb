# Dataset readers/writers and the synthetic data generator.
