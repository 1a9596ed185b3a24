"""Wire models for the JSON artifacts."""
