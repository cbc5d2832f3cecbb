# Training loop, optimizers and loss.
