"""Multibeam satellite downlink scheduling with QoS-aware power allocation."""
