"""5G U-plane latency modeling, downlink simulation, synthetic KPIs and predictive QoS."""
__version__ = "0.1.0"
