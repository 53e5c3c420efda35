"""Schema validators for files refrec writes."""
