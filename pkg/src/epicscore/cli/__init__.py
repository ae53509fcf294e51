"""CLI package for epicscore."""
