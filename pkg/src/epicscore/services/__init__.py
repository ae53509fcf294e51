"""Services for epicscore."""
