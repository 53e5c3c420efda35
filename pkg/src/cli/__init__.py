"""Console-script shims."""
