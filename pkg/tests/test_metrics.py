import math

import pytest

from windbess.core import BessAction, BessMode, MarketTick, StepLedger, SystemConfig, objective_total
from windbess.data import NormStats, synth_trace
from windbess.metrics import (
    EpisodeLedger,
    Summary,
    cumulative_csv,
    format_table,
    quartile_analysis,
    summarize,
)
from windbess.td3 import Td3Agent, Td3Hyper, rollout


def step(**kw):
    return StepLedger(dt_hours=1 / 12, **kw)


def test_empty_summary():
    assert summarize([]) == Summary()


def test_single_step_total():
    s = summarize([step(wind_revenue=208.3333333333333, bess_revenue=47.5, degradation_cost=0.8333333333333333)])
    assert s.total == pytest.approx(255.0, rel=1e-9)


def test_two_episodes_add():
    a = EpisodeLedger([step(wind_revenue=1.5, bess_revenue=2.0, degradation_cost=0.5)])
    b = EpisodeLedger([step(wind_revenue=3.0, bess_revenue=-1.0, degradation_cost=0.25)])
    both = summarize([a, b])
    assert both.total == pytest.approx(summarize(a).total + summarize(b).total, rel=1e-12)


def charge(price, spot, curt, freq=0.0):
    return step(mode="charge", spot_price=price, curtail_freq=freq,
                spot_charged=spot / 12, absorbed_curtailment=curt / 12)


def test_all_spot_or_all_curtailment():
    spot = [charge(p, 5.0, 0.0) for p in range(8)]
    assert quartile_analysis(EpisodeLedger(spot)).curtail_share == (0.0,) * 4
    curt = [charge(p, 0.0, 5.0) for p in range(8)]
    assert quartile_analysis(EpisodeLedger(curt)).curtail_share == (1.0,) * 4


def test_hand_built_quartiles():
    # prices 10..80; quartile edges 27.5, 45, 62.5 put two steps in each bucket
    shares = [(4, 0), (2, 2), (1, 3), (0, 4), (3, 1), (4, 0), (0, 4), (0, 4)]
    steps = [charge(10.0 * (i + 1), s, c) for i, (s, c) in enumerate(shares)]
    steps.append(step(mode="discharge", spot_price=500.0))
    rep = quartile_analysis(EpisodeLedger(steps))
    assert rep.edges == pytest.approx((27.5, 45.0, 62.5))
    assert rep.counts == (2, 2, 2, 2)
    assert rep.curtail_share == pytest.approx((0.25, 0.875, 0.125, 1.0))
    assert rep.spot_share == pytest.approx((0.75, 0.125, 0.875, 0.0))


def test_quartiles_by_frequency():
    steps = [charge(50.0, 1.0, 1.0, freq=f / 10) for f in range(8)]
    assert quartile_analysis(steps, "curtail_freq").counts == (2, 2, 2, 2)
    with pytest.raises(ValueError):
        quartile_analysis(steps, "colour")
    with pytest.raises(ValueError):
        quartile_analysis(steps[:3])


def test_curtailment_accounting():
    led = EpisodeLedger([step(wind_curtailed=12.0, absorbed_curtailment=0.5, spot_charged=0.25)])
    s = summarize(led)
    assert s.curtailed_mwh == pytest.approx(1.0)
    assert s.spilled_mwh == pytest.approx(0.5)
    assert s.curtailment_share == pytest.approx(0.5 / 0.75)


def test_summary_matches_objective_on_rollout():
    trace = synth_trace(2, 8)
    hyper = Td3Hyper(hidden=(8, 8))
    led = rollout(trace, SystemConfig(), Td3Agent(4, 3, hyper, 1), Td3Agent(2, 1, hyper, 2),
                  NormStats.from_trace(trace))
    s = summarize(led)
    w, b, c, total = objective_total(led.steps)
    for got, want in ((s.wind_revenue, w), (s.bess_revenue, b), (s.degradation, c), (s.total, total)):
        assert math.isclose(got, want, rel_tol=1e-9, abs_tol=1e-9)


def test_table_and_csv():
    led = EpisodeLedger([step(wind_revenue=1.0), step(bess_revenue=2.0)], label="x")
    text = format_table({"x": summarize(led).to_dict()})
    assert "Absorbed" in text and "Spilled" in text and "Total" in text
    rows = cumulative_csv({"x": led}).splitlines()
    assert rows[0] == "series,step,value" and rows[-1] == "x,1,3.0"
