"""Simulated network, billing-period orchestration and the traffic model.

``network`` sits below the MPC engine; ``period`` and ``costmodel`` sit
above billing, so they are loaded on first attribute access.
"""
import importlib

from .network import (DEALER, MAC_CHECK, OFFLINE, ONLINE, PHASES, SUPPLIER, Alert, Endpoint, Message,
                      Network, NetStats, Role, TamperShare, client, party)

_LAZY = {
    "CostPrediction": "costmodel", "predict_bytes": "costmodel",
    "InjectFraud": "period", "PeriodResult": "period", "load_adversary": "period",
    "parse_adversary": "period", "run_billing_period": "period", "write_alerts": "period",
}


def __getattr__(name):
    if name in _LAZY:
        return getattr(importlib.import_module(f".{_LAZY[name]}", __name__), name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


__all__ = [
    "Alert", "CostPrediction", "DEALER", "Endpoint", "InjectFraud", "MAC_CHECK", "Message", "NetStats",
    "Network", "OFFLINE", "ONLINE", "PHASES", "PeriodResult", "Role", "SUPPLIER", "TamperShare", "client",
    "load_adversary", "parse_adversary", "party", "predict_bytes", "run_billing_period", "write_alerts",
]
