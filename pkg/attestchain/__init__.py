# Command-line entry point for the evidence pipeline.
