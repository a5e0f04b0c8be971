"""Dense RF-EMF exposure maps from sparse sensors with an untrained generator prior."""

__version__ = "0.1.0"
