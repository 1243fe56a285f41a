import hashlib
import logging
import os
from pathlib import Path
from typing import IO, List, Optional, Sequence, Union

import numpy as np
from pydantic import ValidationError

from app.core.exceptions import CaseValidationError
from app.core.network import (
    Bus, Generator, Line, Network, PvSource, TclSite, orient_lines, validate_radial,
)
from app.models.schemas import CaseDocument

logger = logging.getLogger(__name__)

CaseSource = Union[bytes, str, Path, IO[bytes]]


def _read_bytes(source: CaseSource) -> bytes:
    if isinstance(source, bytes):
        return source
    if isinstance(source, (str, Path)):
        with open(source, "rb") as f:
            return f.read()
    return source.read()


def _profile(value, horizon: int, what: str, errors: List[str]) -> np.ndarray:
    if isinstance(value, (int, float)):
        return np.full(horizon, float(value))
    arr = np.asarray(value, dtype=float)
    if arr.shape != (horizon,):
        errors.append(f"{what}: expected {horizon} values, got {arr.size}")
        return np.zeros(horizon)
    return arr


def _bound(value: Optional[float], default: float) -> float:
    return default if value is None else float(value)


class CaseLoader:
    """Load a case document into a validated Network"""

    @staticmethod
    def load(filepath: str) -> Network:
        if not os.path.exists(filepath):
            logger.error(f"Case file not found: {filepath}")
            raise FileNotFoundError(filepath)
        network = CaseLoader.parse(_read_bytes(filepath))
        logger.info(
            f"Loaded case '{network.name}' from {filepath}: {network.n_buses} buses, "
            f"{network.n_lines} lines, {len(network.tcl)} TCL ensembles, horizon {network.horizon}"
        )
        return network

    @staticmethod
    def parse(raw: bytes) -> Network:
        try:
            doc = CaseDocument.model_validate_json(raw)
        except ValidationError as e:
            raise CaseValidationError([f"parse error: {err['loc']}: {err['msg']}" for err in e.errors()])
        except ValueError as e:
            raise CaseValidationError([f"parse error: {e}"])

        errors: List[str] = []
        header = doc.header
        T = header.horizon

        buses = []
        seen_ids = set()
        for rec in doc.buses:
            if rec.id in seen_ids:
                errors.append(f"duplicate bus id {rec.id}")
            seen_ids.add(rec.id)
            if not 0 < rec.v_min_sq < rec.v_max_sq:
                errors.append(f"bus {rec.id}: voltage limits must satisfy 0 < v_min_sq < v_max_sq")
            buses.append(Bus(
                id=rec.id,
                load_p=_profile(rec.load_p, T, f"bus {rec.id} load_p", errors),
                load_q=_profile(rec.load_q, T, f"bus {rec.id} load_q", errors),
                v_min_sq=rec.v_min_sq,
                v_max_sq=rec.v_max_sq,
            ))
        if not buses:
            errors.append("case has no buses")

        def check_bus(bus_id: int, what: str):
            if bus_id not in seen_ids:
                errors.append(f"{what} references undefined bus {bus_id}")

        lines = []
        for rec in doc.lines:
            check_bus(rec.from_bus, f"line {rec.id}")
            check_bus(rec.to_bus, f"line {rec.id}")
            if rec.from_bus == rec.to_bus:
                errors.append(f"line {rec.id}: from and to bus are equal")
            if rec.r_pu < 0 or rec.x_pu < 0 or (rec.r_pu == 0 and rec.x_pu == 0):
                errors.append(f"line {rec.id}: non-positive impedance")
            lines.append(Line(rec.id, rec.from_bus, rec.to_bus, rec.r_pu, rec.x_pu))

        generators = []
        for rec in doc.generators:
            check_bus(rec.bus, "generator")
            gen = Generator(
                bus=rec.bus,
                p_min=_bound(rec.p_min, -np.inf), p_max=_bound(rec.p_max, np.inf),
                q_min=_bound(rec.q_min, -np.inf), q_max=_bound(rec.q_max, np.inf),
            )
            if gen.p_min > gen.p_max or gen.q_min > gen.q_max:
                errors.append(f"generator at bus {rec.bus}: limit inversion")
            generators.append(gen)

        pv = []
        for rec in doc.pv:
            check_bus(rec.bus, "pv")
            pv.append(PvSource(
                bus=rec.bus,
                forecast_p=_profile(rec.forecast_p, T, f"pv {rec.bus} forecast_p", errors),
                sigma_frac=rec.sigma_frac,
                rating_kw=rec.rating_kw,
            ))

        tcl = []
        tcl_seen = set()
        for rec in doc.tcl:
            check_bus(rec.bus, "tcl")
            if rec.bus in tcl_seen:
                errors.append(f"more than one TCL ensemble at bus {rec.bus}")
            tcl_seen.add(rec.bus)
            if not 0 < rec.range_lo_frac < rec.range_hi_frac:
                errors.append(f"tcl {rec.bus}: range must satisfy 0 < lo < hi")
            transitions = None
            if rec.default_transitions is not None:
                transitions = np.asarray(rec.default_transitions, dtype=float)
                errors.extend(_check_transitions(transitions, rec.n_states, f"tcl {rec.bus}"))
            rho = None
            if rec.rho_init is not None:
                rho = np.asarray(rec.rho_init, dtype=float)
                if rho.shape != (rec.n_states,) or np.any(rho < 0) or abs(rho.sum() - 1) > 1e-9:
                    errors.append(f"tcl {rec.bus}: rho_init must be a distribution over {rec.n_states} states")
            tcl.append(TclSite(
                bus=rec.bus, avg_load_kw=rec.avg_load_kw, n_states=rec.n_states,
                range_lo_frac=rec.range_lo_frac, range_hi_frac=rec.range_hi_frac,
                power_factor=rec.power_factor, gamma_mode=rec.gamma_mode.value,
                default_transitions=transitions, rho_init=rho,
            ))

        tariff = None
        if header.lambda_tariff is not None:
            tariff = _profile(header.lambda_tariff, T, "header lambda_tariff", errors)

        root = header.root if header.root is not None else (buses[0].id if buses else 0)
        check_bus(root, "header root")

        if errors:
            raise CaseValidationError(errors)

        network = Network(
            buses=tuple(buses), lines=tuple(lines), root=root, horizon=T,
            v0_sq=header.v0_sq, base_kva=header.base_kva, base_kv=header.base_kv,
            k_factor=header.k_factor, generators=tuple(generators), pv=tuple(pv),
            tcl=tuple(tcl), lambda_tariff=tariff, name=header.name,
            source_hash=hashlib.sha256(raw).hexdigest(),
        )

        report = validate_radial(network)
        if not report.ok:
            raise CaseValidationError(report.messages() or ["network is not radial"])
        return network.with_resources(lines=tuple(orient_lines(network.lines, root)))


def _check_transitions(matrix: np.ndarray, n: int, what: str) -> Sequence[str]:
    if matrix.shape != (n, n):
        return [f"{what}: default_transitions must be {n}x{n}"]
    out = []
    if np.any(matrix < 0) or np.any(matrix > 1):
        out.append(f"{what}: transition probabilities must lie in [0, 1]")
    if np.any(np.abs(matrix.sum(axis=0) - 1.0) > 1e-9):
        out.append(f"{what}: default_transitions columns must sum to 1")
    return out


def load_case(source: CaseSource) -> Network:
    """Parse a case document from raw bytes, a path or a binary stream"""
    if isinstance(source, (str, Path)):
        return CaseLoader.load(str(source))
    return CaseLoader.parse(_read_bytes(source))
