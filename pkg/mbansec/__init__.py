"""IEEE 802.15.6 MAC security model, hardened profile, network simulator and assessment engine."""

__version__ = "0.1.0"
