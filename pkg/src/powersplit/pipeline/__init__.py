"""End-to-end stages: synthesis, usage reports, training, streaming
disaggregation, fleet control, and the command-line entry points."""
