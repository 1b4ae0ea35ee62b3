"""Command-line front end for the motif graph pipeline."""
