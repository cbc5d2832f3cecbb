"""Library code: tensor kernels, layers, NodeDrop, training loop and CLI."""
