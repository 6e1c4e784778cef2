"""Canonical JSON files for networks, design states and cascade additions.

Every float is written with 17 significant digits, which round-trips IEEE
doubles exactly, so save followed by load reproduces arrays bit for bit.
Documents are written in one canonical form (sorted keys, no whitespace)
and a network's identity is the SHA-256 of that canonical form; state
files embed both the network and its fingerprint so stale or mixed-up
state can be rejected.
"""

from __future__ import annotations

import hashlib
import json
import math

import numpy as np

from .model import CascadeNetwork, Subsystem
from .protocol import DesignRecord, NetworkDesignState

__all__ = [
    "MalformedFile",
    "SCHEMA_VERSION",
    "network_to_dict",
    "network_from_dict",
    "network_fingerprint",
    "save_network",
    "load_network",
    "state_to_dict",
    "state_from_dict",
    "save_state",
    "load_state",
    "save_addition",
    "load_addition",
]

SCHEMA_VERSION = 1


class MalformedFile(ValueError):
    """A document that cannot be interpreted under the current schema."""


def _fmt_float(x) -> str:
    x = float(x)
    if not math.isfinite(x):
        raise MalformedFile("non-finite value cannot be serialized")
    return format(x, ".17g")


def _canonical(obj) -> str:
    """Serialize with sorted keys, no whitespace and 17-digit floats."""
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        return _canonical(obj.tolist())
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(_canonical(v) for v in obj) + "]"
    if isinstance(obj, dict):
        items = sorted(obj.items(), key=lambda kv: str(kv[0]))
        return "{" + ",".join(json.dumps(str(k)) + ":" + _canonical(v) for k, v in items) + "}"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _matrix(value, name):
    if value is None:
        raise MalformedFile(f"missing matrix {name!r}")
    try:
        a = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise MalformedFile(f"matrix {name!r} is not numeric: {exc}") from None
    if a.ndim == 0:
        a = a.reshape(1, 1)
    if a.ndim != 2:
        raise MalformedFile(f"matrix {name!r} must be 2-D, got ndim={a.ndim}")
    return a


def _expect(doc, kind):
    if not isinstance(doc, dict):
        raise MalformedFile("top-level document must be an object")
    if doc.get("schema") != SCHEMA_VERSION:
        raise MalformedFile(f"unsupported schema {doc.get('schema')!r}")
    if doc.get("type") != kind:
        raise MalformedFile(f"expected a {kind!r} document, got {doc.get('type')!r}")


def _subsystem_to_dict(sub: Subsystem) -> dict:
    return {"A": sub.A, "B1": sub.B1, "B2": sub.B2, "B3": sub.B3, "C": sub.C}


def _subsystem_from_dict(d, where) -> Subsystem:
    if not isinstance(d, dict):
        raise MalformedFile(f"{where} must be an object")
    try:
        return Subsystem(
            A=_matrix(d.get("A"), "A"),
            B1=_matrix(d.get("B1"), "B1"),
            B2=_matrix(d.get("B2"), "B2"),
            B3=_matrix(d.get("B3"), "B3"),
            C=_matrix(d.get("C"), "C"),
        )
    except ValueError as exc:
        raise MalformedFile(f"{where}: {exc}") from None


def network_to_dict(net: CascadeNetwork) -> dict:
    couplings = [
        {"i": i, "j": j, "h": net.couplings[(i, j)].h}
        for (i, j) in sorted(net.couplings)
    ]
    return {
        "schema": SCHEMA_VERSION,
        "type": "network",
        "subsystems": [_subsystem_to_dict(s) for s in net.subsystems],
        "couplings": couplings,
    }


def network_from_dict(doc) -> CascadeNetwork:
    _expect(doc, "network")
    subs_doc = doc.get("subsystems")
    if not isinstance(subs_doc, list) or not subs_doc:
        raise MalformedFile("a network needs a non-empty subsystem list")
    subs = [_subsystem_from_dict(d, f"subsystems[{k}]") for k, d in enumerate(subs_doc)]
    coup_doc = doc.get("couplings", [])
    if not isinstance(coup_doc, list):
        raise MalformedFile("couplings must be a list")
    blocks = {}
    for k, entry in enumerate(coup_doc):
        if not isinstance(entry, dict):
            raise MalformedFile(f"couplings[{k}] must be an object")
        try:
            i, j = int(entry["i"]), int(entry["j"])
        except (KeyError, TypeError, ValueError):
            raise MalformedFile(f"couplings[{k}] needs integer indices i and j") from None
        if (i, j) in blocks:
            raise MalformedFile(f"couplings[{k}] repeats the pair ({i}, {j})")
        blocks[(i, j)] = _matrix(entry.get("h"), f"couplings[{k}].h")
    return CascadeNetwork.from_blocks(subs, blocks)


def network_fingerprint(net: CascadeNetwork) -> str:
    text = _canonical(network_to_dict(net))
    return hashlib.sha256(text.encode("ascii")).hexdigest()


def save_network(net: CascadeNetwork, path) -> None:
    with open(path, "w") as fh:
        fh.write(_canonical(network_to_dict(net)) + "\n")


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise MalformedFile(f"{path}: not valid JSON ({exc})") from None


def load_network(path) -> CascadeNetwork:
    return network_from_dict(_load_json(path))


def _record_to_dict(rec: DesignRecord) -> dict:
    def opt(a):
        return None if a is None else a

    return {
        "index": rec.index,
        "Q": rec.Q,
        "epsilon": rec.epsilon,
        "K_self": opt(rec.K_self),
        "K_to_prev": opt(rec.K_to_prev),
        "K_prev_to_self": opt(rec.K_prev_to_self),
        "M_cl": rec.M_cl,
        "route": rec.route,
    }


def _record_from_dict(d, where) -> DesignRecord:
    if not isinstance(d, dict):
        raise MalformedFile(f"{where} must be an object")

    def opt(name):
        value = d.get(name)
        return None if value is None else _matrix(value, name)

    try:
        return DesignRecord(
            index=int(d["index"]),
            Q=_matrix(d.get("Q"), "Q"),
            epsilon=float(d["epsilon"]),
            K_self=opt("K_self"),
            K_to_prev=opt("K_to_prev"),
            K_prev_to_self=opt("K_prev_to_self"),
            M_cl=_matrix(d.get("M_cl"), "M_cl"),
            route=str(d.get("route")),
        )
    except MalformedFile:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedFile(f"{where}: {exc}") from None


def state_to_dict(state: NetworkDesignState) -> dict:
    return {
        "schema": SCHEMA_VERSION,
        "type": "state",
        "fingerprint": network_fingerprint(state.net),
        "network": network_to_dict(state.net),
        "records": [_record_to_dict(r) for r in state.records],
        "global_epsilon": state.global_epsilon,
    }


def state_from_dict(doc) -> NetworkDesignState:
    _expect(doc, "state")
    net = network_from_dict(doc.get("network"))
    stored = doc.get("fingerprint")
    actual = network_fingerprint(net)
    if stored != actual:
        raise MalformedFile(
            f"network fingerprint mismatch: file says {stored!r}, network hashes to {actual!r}"
        )
    recs_doc = doc.get("records")
    if not isinstance(recs_doc, list) or not recs_doc:
        raise MalformedFile("a state needs a non-empty record list")
    records = tuple(_record_from_dict(d, f"records[{k}]") for k, d in enumerate(recs_doc))
    try:
        state = NetworkDesignState(net=net, records=records)
    except ValueError as exc:
        raise MalformedFile(str(exc)) from None
    stored_eps = doc.get("global_epsilon")
    if stored_eps is not None and float(stored_eps) != state.global_epsilon:
        raise MalformedFile(
            f"global_epsilon {stored_eps!r} does not match the record minimum {state.global_epsilon!r}"
        )
    return state


def save_state(state: NetworkDesignState, path) -> None:
    with open(path, "w") as fh:
        fh.write(_canonical(state_to_dict(state)) + "\n")


def load_state(path) -> NetworkDesignState:
    return state_from_dict(_load_json(path))


def save_addition(sub: Subsystem, h_self, h_prev, h_to_new, path) -> None:
    """Write the pieces that extend a cascade by one subsystem.

    h_self couples the new subsystem to itself, h_prev to its predecessor,
    and h_to_new is the predecessor's new coupling column; each may be None.
    """
    doc = {
        "schema": SCHEMA_VERSION,
        "type": "addition",
        "subsystem": _subsystem_to_dict(sub),
        "h_self": None if h_self is None else np.asarray(h_self, dtype=float),
        "h_prev": None if h_prev is None else np.asarray(h_prev, dtype=float),
        "h_to_new": None if h_to_new is None else np.asarray(h_to_new, dtype=float),
    }
    with open(path, "w") as fh:
        fh.write(_canonical(doc) + "\n")


def load_addition(path):
    doc = _load_json(path)
    _expect(doc, "addition")
    sub = _subsystem_from_dict(doc.get("subsystem"), "subsystem")

    def opt(name):
        value = doc.get(name)
        return None if value is None else _matrix(value, name)

    return sub, opt("h_self"), opt("h_prev"), opt("h_to_new")
