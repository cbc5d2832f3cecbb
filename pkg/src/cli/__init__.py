# Command-line entry point (``nodedrop``).
