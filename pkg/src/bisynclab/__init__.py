"""Deterministic laboratory for bisynchronous bilateral-swap links."""
