"""Configuration loading, MNIST experiment and command-line interface."""
