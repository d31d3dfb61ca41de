"""UAV-assisted batteryless sensor network simulator with a from-scratch SAC-PPV agent."""
__version__ = "0.1.0"
