"""Small helpers shared by the services and the CLI."""
