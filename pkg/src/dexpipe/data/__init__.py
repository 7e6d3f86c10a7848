"""Packaged default rig and hand model."""
