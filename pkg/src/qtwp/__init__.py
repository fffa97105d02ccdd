"""Slot-synchronous simulator for a two-way protocol that carries classical
bits over EPR-pair qubits, with superdense coding on the closing qubit."""

__version__ = "0.1.0"
