"""Physics-informed symbolic regression engine."""
