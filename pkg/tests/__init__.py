"""Tests package for epicscore."""
