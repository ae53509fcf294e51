"""Utilities package for epicscore."""
