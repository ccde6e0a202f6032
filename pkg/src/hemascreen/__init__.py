"""hemascreen: haemoglobin estimation from nailbed, conjunctiva and tongue photos."""

__version__ = "0.1.0"
