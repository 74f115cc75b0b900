"""Closed-loop simulation and gain tuning for a PMSM-driven linear actuator."""
