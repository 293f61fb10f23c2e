"""Example generators, experiments, file formats and the command line."""
