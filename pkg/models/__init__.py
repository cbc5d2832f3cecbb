# Network container, architecture presets and the checkpoint format.
