"""Batch scheduling and the simulated cost model."""
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lmdecode.batching import (
    BatchCostModel,
    BatchOverflow,
    BatchRecord,
    LmRequest,
    schedule,
    simulate_cost,
    throughput_report,
)


class _Hist:
    def __init__(self, hid):
        self.hid = hid


def _request(hid, demanded, dist=0, gap=0.0):
    return LmRequest(history=_Hist(hid), demanded=demanded,
                     dist_to_word_end=dist, score_gap=gap)


requests_st = st.lists(
    st.tuples(st.integers(0, 30), st.booleans(), st.integers(0, 6),
              st.floats(0, 50, allow_nan=False)),
    max_size=40,
)


@given(requests_st, st.integers(1, 12))
@settings(max_examples=200, deadline=None)
def test_schedule_matches_sort_oracle(raw, capacity):
    pending = [_request(h, d, dist, gap) for h, d, dist, gap in raw]

    # Reference: dedup by hid (demanded wins), all demanded first by hid,
    # then speculative by (dist, gap, hid) up to capacity.
    by_hid = {}
    for r in pending:
        cur = by_hid.get(r.history.hid)
        if cur is None or (r.demanded and not cur.demanded):
            by_hid[r.history.hid] = r
    dem = sorted((r for r in by_hid.values() if r.demanded),
                 key=lambda r: r.history.hid)
    spc = sorted((r for r in by_hid.values() if not r.demanded),
                 key=lambda r: (r.dist_to_word_end, r.score_gap, r.history.hid))

    if len(dem) > capacity:
        with pytest.raises(BatchOverflow) as exc:
            schedule(pending, capacity)
        assert exc.value.overflow == len(dem) - capacity
        return

    batch = schedule(pending, capacity)
    assert len(batch) <= capacity
    got = [(r.history.hid, r.demanded) for r in batch]
    want = [(r.history.hid, r.demanded)
            for r in dem + spc[:capacity - len(dem)]]
    assert got == want
    # No history twice.
    assert len({r.history.hid for r in batch}) == len(batch)


def test_schedule_demanded_always_included():
    pending = [_request(i, False, dist=0, gap=0.0) for i in range(10)]
    pending.append(_request(99, True, dist=5, gap=100.0))
    batch = schedule(pending, 4)
    assert any(r.history.hid == 99 for r in batch)
    assert len(batch) == 4


def test_schedule_dedup_prefers_demanded():
    pending = [_request(7, False, dist=0), _request(7, True, dist=9)]
    batch = schedule(pending, 8)
    assert len(batch) == 1 and batch[0].demanded


def test_schedule_rejects_bad_capacity():
    with pytest.raises(ValueError):
        schedule([], 0)


def test_cost_model_default_shape():
    m = BatchCostModel()
    assert m.batch_ms(1) == pytest.approx(3.5)
    assert m.batch_ms(32) == pytest.approx(3.3 + 0.2 * 32)
    # Batching 32 histories costs well under a quarter of lone evaluation.
    assert m.per_history_ms(32) <= 0.25 * m.per_history_ms(1)
    with pytest.raises(ValueError):
        m.batch_ms(0)


def test_simulate_cost_is_monotone_decreasing():
    table = simulate_cost(BatchCostModel(), [1, 2, 4, 8, 16, 32, 64])
    per = [ms for _, ms in table]
    assert per == sorted(per, reverse=True)
    assert table[0] == (1, pytest.approx(3.5))


def test_throughput_report_recount():
    trace = [BatchRecord(size=4, demanded=2), BatchRecord(size=1, demanded=1),
             BatchRecord(size=7, demanded=0)]
    model = BatchCostModel(fixed_ms=2.0, per_item_ms=0.5)
    rep = throughput_report(trace, model)
    assert rep.batches == 3
    assert rep.histories == 12
    assert rep.demanded == 3
    assert rep.total_ms == pytest.approx(sum(2.0 + 0.5 * r.size for r in trace))
    assert rep.mean_batch_size == pytest.approx(4.0)
    assert rep.as_dict()["histories"] == 12


def test_throughput_report_empty_trace():
    rep = throughput_report([])
    assert rep.batches == 0 and rep.histories == 0
    assert rep.total_ms == 0.0
    assert math.isnan(rep.mean_batch_size)
