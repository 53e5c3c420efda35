"""refrec command-line application."""
