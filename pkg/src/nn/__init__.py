# Layer definitions: dense, conv, pool, batch-norm, flatten, activations.
