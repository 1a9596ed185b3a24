"""Expression machinery, losses and search drivers."""
