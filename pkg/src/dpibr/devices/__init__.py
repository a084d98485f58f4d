"""Device models: GFL inverter, synchronous machine, network elements."""
