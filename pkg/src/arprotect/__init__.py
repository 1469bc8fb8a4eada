"""AR-coefficient protective-relay analytics."""
