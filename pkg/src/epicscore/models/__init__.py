"""Data models for epicscore."""
