"""Shared fixtures: toy workloads and their (expensive) exhaustive oracles.

Oracle archives are session-scoped — several test modules and most
acceptance criteria reuse the same ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass

import pytest

from resacc.formats import NumericFormat
from resacc.microdnn import EvalSet, FaultSemantics, MicroNetwork, accuracy
from resacc.oracle import SiteArchive, exhaustive_ra
from resacc.probtransfer import SiteProbabilityTable, build_table
from resacc.profile import AcceleratorConfig, NetworkProfile, derive_profile
from resacc.toynets import (
    make_config,
    make_convergence_config,
    make_dense_toy,
    make_evalset,
    make_skewed_toy,
)


@dataclass
class ToyContext:
    net: MicroNetwork
    config: AcceleratorConfig
    profile: NetworkProfile
    evalset: EvalSet
    table: SiteProbabilityTable
    sa: float


def build_context(net, config, evalset_size=40, evalset_seed=1, utilization=None):
    profile = derive_profile(net, config, utilization=utilization)
    evalset = make_evalset(net, evalset_size, seed=evalset_seed)
    return ToyContext(
        net=net,
        config=config,
        profile=profile,
        evalset=evalset,
        table=build_table(profile, config),
        sa=accuracy(net, evalset, None, profile),
    )


@pytest.fixture(scope="session")
def dense_ctx() -> ToyContext:
    return build_context(make_dense_toy(seed=3), make_config())


@pytest.fixture(scope="session")
def dense_oracle(dense_ctx) -> tuple:
    """(RAResult, SiteArchive) for the dense toy under true fault semantics."""
    return exhaustive_ra(
        dense_ctx.profile,
        dense_ctx.config,
        dense_ctx.net,
        dense_ctx.evalset,
        FaultSemantics.TRUE,
    )


def _skew_context(variant: int) -> ToyContext:
    return build_context(
        make_skewed_toy(variant),
        make_convergence_config(),
        evalset_size=100,
        evalset_seed=5 + variant,
    )


def _skew_oracle(ctx: ToyContext) -> tuple:
    return exhaustive_ra(
        ctx.profile,
        ctx.config,
        ctx.net,
        ctx.evalset,
        FaultSemantics.TRUE,
        max_inferences=3 * 10**6,
    )


@pytest.fixture(scope="session")
def skew0_ctx() -> ToyContext:
    return _skew_context(0)


@pytest.fixture(scope="session")
def skew1_ctx() -> ToyContext:
    return _skew_context(1)


@pytest.fixture(scope="session")
def skew0_oracle(skew0_ctx) -> tuple:
    return _skew_oracle(skew0_ctx)


@pytest.fixture(scope="session")
def skew1_oracle(skew1_ctx) -> tuple:
    return _skew_oracle(skew1_ctx)
