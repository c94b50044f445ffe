"""Text-guided human-object interaction generation."""
