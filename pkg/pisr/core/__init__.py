"""Configuration, logging, errors and run lifecycle."""
