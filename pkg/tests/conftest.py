from __future__ import annotations

import pytest

from src.params import ProtocolParams, link_at_attenuation, replace_section
from src.presets import load_preset


@pytest.fixture
def params() -> ProtocolParams:
    return ProtocolParams()


@pytest.fixture
def asymptotic(params) -> ProtocolParams:
    return replace_section(params, "estimation", finite_size=False)


@pytest.fixture
def mux_params() -> ProtocolParams:
    return load_preset("multiplexed")


@pytest.fixture
def at_db(params):
    def make(attenuation_db: float, base: ProtocolParams = None) -> ProtocolParams:
        return link_at_attenuation(base or params, attenuation_db)

    return make
