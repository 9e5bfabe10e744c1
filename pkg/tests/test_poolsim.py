"""Tests for the counterfactual connection-pool replay."""

from typing import List

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from h2coalesce.classify import analyze_page
from h2coalesce.config import STREAM_LIMIT_ASSUMPTION
from h2coalesce.poolsim import PoolPolicy, simulate_pool
from h2coalesce.schemas.trace_schema import CredentialsHint
from h2coalesce.utils.exceptions import ConfigurationError
from tests.factories import IP_A, IP_B, build_sessions, make_session, make_timeline, timeline_specs, worked_example


def test_worked_example_needs_two_connections(worked_timeline) -> None:
    result = simulate_pool(worked_timeline)

    assert result.observed == 4
    assert result.connections_opened == 2
    assert result.connections_saved == 2
    assert result.mapping == {1: 1, 2: 2, 3: 1, 4: 2}
    assert result.assumptions == (STREAM_LIMIT_ASSUMPTION,)


def test_closed_connection_is_not_reused() -> None:
    sessions = worked_example({1: 15.0, 2: 25.0})

    result = simulate_pool(make_timeline(sessions))

    assert result.mapping == {1: 1, 2: 2, 3: 3, 4: 4}
    assert result.connections_opened == 4


def test_connection_must_cover_every_domain_it_served() -> None:
    first = make_session(1, "a.example.com", sans=["a.example.com", "b.example.com"])
    second = make_session(2, "b.example.com", open_time=5, sans=["*.example.com"], extra_domains=["c.example.com"])

    result = simulate_pool(make_timeline([first, second]))

    assert result.connections_opened == 2


def test_misdirected_host_is_not_pooled() -> None:
    first = make_session(1, "a.example.com", sans=["*.example.com"], excluded=["b.example.com"])
    second = make_session(2, "b.example.com", open_time=5)

    assert simulate_pool(make_timeline([first, second])).connections_opened == 2


def test_other_endpoint_is_not_pooled() -> None:
    first = make_session(1, "a.example.com", ip=IP_A, sans=["*.example.com"])
    second = make_session(2, "b.example.com", ip=IP_B, open_time=5)

    assert simulate_pool(make_timeline([first, second])).connections_saved == 0


def test_credentials_partitioning() -> None:
    sessions = [
        make_session(1, "a.test", hint=CredentialsHint.INCLUDED),
        make_session(2, "a.test", open_time=5, hint=CredentialsHint.OMITTED),
        make_session(3, "a.test", open_time=6, hint=CredentialsHint.UNKNOWN),
    ]
    timeline = make_timeline(sessions)

    partitioned = simulate_pool(timeline)
    merged = simulate_pool(timeline, PoolPolicy(credentials_partitioning=False))

    assert partitioned.connections_opened == 2
    assert partitioned.mapping == {1: 1, 2: 2, 3: 1}
    assert merged.connections_opened == 1


@pytest.mark.parametrize("flags", [{"reuse_requires_san": False}, {"reuse_requires_endpoint": False}])
def test_policy_cannot_relax_reuse_rules(flags: dict) -> None:
    with pytest.raises(ConfigurationError):
        PoolPolicy(**flags)


@settings(max_examples=300, deadline=None)
@given(specs=timeline_specs(), endless=st.booleans())
def test_pool_never_opens_more_than_observed(specs: List[dict], endless: bool) -> None:
    timeline = make_timeline(build_sessions(specs, endless))

    partitioned = simulate_pool(timeline)
    merged = simulate_pool(timeline, PoolPolicy(credentials_partitioning=False))

    assert 1 <= partitioned.connections_opened <= partitioned.observed == len(specs)
    assert merged.connections_opened <= partitioned.connections_opened
    assert partitioned.connections_saved == partitioned.observed - partitioned.connections_opened
    assert set(partitioned.mapping) == {s.conn_id for s in timeline.sessions}
    assert set(partitioned.mapping.values()) <= set(partitioned.mapping)


@settings(max_examples=300, deadline=None)
@given(specs=timeline_specs(), endless=st.booleans())
def test_page_without_redundancy_saves_nothing(specs: List[dict], endless: bool) -> None:
    timeline = make_timeline(build_sessions(specs, endless))

    if not analyze_page(timeline).findings:
        assert simulate_pool(timeline).connections_saved == 0
