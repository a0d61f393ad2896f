import threading

import numpy as np
import pytest

from socripple.engagement import (DAY, HOUR, EngagementBuffer, EngagementError, EngagementEvent,
                                  EventLog, ImpressionLog, Signal)


def oracle(raw, user, now, window=DAY, max_age=DAY):
    return {(it, at) for u, it, at, cr in raw
            if u == user and at <= now and now - at <= window and now - cr <= max_age}


def random_trace(rng, n, n_users=20, n_items=50, horizon=3 * DAY):
    created = rng.uniform(0, horizon, n_items)
    raw = []
    for _ in range(n):
        it = int(rng.integers(n_items))
        at = float(created[it] + rng.uniform(0, DAY * 1.5))
        raw.append((int(rng.integers(n_users)), it, at, float(created[it])))
    return raw


def test_record_and_query():
    b = EngagementBuffer()
    b.record(EngagementEvent(1, 9, 100.0, Signal.LIKE), 50.0)
    assert b.recent_items(1, 200.0) == {(9, 100.0)}
    assert b.recent_items(2, 200.0) == set()


def test_record_rejects_bad_events():
    b = EngagementBuffer()
    with pytest.raises(EngagementError):
        b.record(EngagementEvent(1, 9, 100.0, Signal.SKIP), 0.0)
    with pytest.raises(EngagementError):
        b.record(EngagementEvent(1, 9, 100.0, Signal.VIEW), 0.0)
    with pytest.raises(EngagementError):
        b.record(EngagementEvent(1, 9, 100.0, Signal.LIKE), 200.0)


def test_window_boundaries():
    b = EngagementBuffer(max_item_age=10 * DAY)
    b.record(EngagementEvent(1, 3, 0.0, Signal.LIKE), 0.0)
    assert b.recent_items(1, 25 * HOUR) == set()
    assert b.recent_items(1, 24 * HOUR) == {(3, 0.0)}


def test_item_age_gate():
    b = EngagementBuffer(window=DAY, max_item_age=DAY)
    b.record(EngagementEvent(1, 3, 20 * HOUR, Signal.LIKE), 0.0)
    assert b.recent_items(1, 24 * HOUR) == {(3, 20 * HOUR)}
    assert b.recent_items(1, 24 * HOUR + 1) == set()


def test_randomized_trace_matches_filter_oracle(rng):
    raw = random_trace(rng, 1000)
    b = EngagementBuffer()
    for u, it, at, cr in raw:
        b.record(EngagementEvent(u, it, at), cr)
    for now in rng.uniform(0, 5 * DAY, 50):
        for u in range(20):
            assert b.recent_items(u, now) == oracle(raw, u, now)


def test_window_monotone(rng):
    raw = random_trace(rng, 300)
    small, big = EngagementBuffer(window=6 * HOUR), EngagementBuffer(window=DAY)
    for u, it, at, cr in raw:
        small.record(EngagementEvent(u, it, at), cr)
        big.record(EngagementEvent(u, it, at), cr)
    for now in rng.uniform(0, 4 * DAY, 30):
        for u in range(20):
            assert small.recent_items(u, now) <= big.recent_items(u, now)


def test_prune():
    b = EngagementBuffer()
    b.record(EngagementEvent(1, 3, 0.0), 0.0)
    b.record(EngagementEvent(2, 4, 10.0), 0.0)
    assert b.prune(20.0) == 0
    assert b.prune(10 * DAY) == 2
    assert len(b) == 0 and b.users() == []


def test_prune_preserves_answers(rng):
    raw = random_trace(rng, 800)
    b = EngagementBuffer()
    for u, it, at, cr in raw:
        b.record(EngagementEvent(u, it, at), cr)
    t = 2 * DAY
    before = {u: b.recent_items(u, t) for u in range(20)}
    b.prune(t)
    assert {u: b.recent_items(u, t) for u in range(20)} == before
    for now in (t, t + HOUR, t + DAY):
        for u in range(20):
            assert b.recent_items(u, now) == oracle(raw, u, now)


def test_bulk_load_equals_record(rng):
    raw = random_trace(rng, 500)
    a, b = EngagementBuffer(), EngagementBuffer()
    for u, it, at, cr in raw:
        a.record(EngagementEvent(u, it, at), cr)
    cols = list(zip(*raw))
    b.bulk_load(*cols)
    assert a.dump() == b.dump()


def test_concurrent_writers():
    b = EngagementBuffer()

    def write(u):
        for j in range(100):
            b.record(EngagementEvent(u, j, float(j)), 0.0)

    threads = [threading.Thread(target=write, args=(u,)) for u in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(b) == 800
    assert sum(len(b.recent_items(u, 100.0)) for u in range(8)) == 800


def test_impression_log(rng):
    log = ImpressionLog()
    assert not log.was_shown(1, 2)
    log.mark_shown(1, 2, 5.0)
    assert log.was_shown(1, 2) and log.first_shown(1, 2) == 5.0
    log.mark_shown(1, 2, 9.0)
    assert log.first_shown(1, 2) == 5.0
    marks = set()
    for _ in range(500):
        u, i = rng.integers(0, 30, 2).tolist()
        log.mark_shown(u, i, 0.0)
        marks.add((u, i))
    for u in range(30):
        for i in range(30):
            assert log.was_shown(u, i) == ((u, i) in marks or (u, i) == (1, 2))


def test_signal_parse():
    assert Signal.parse("like") is Signal.LIKE
    assert Signal.parse("LONG_VIEW") is Signal.LONG_VIEW
    with pytest.raises(ValueError):
        Signal.parse("love")


def test_event_log_jsonl_roundtrip(tmp_path):
    ev = [EngagementEvent(2, 1, 5.5, Signal.VIEW), EngagementEvent(1, 3, 1.25, Signal.LIKE)]
    log = EventLog.from_events(ev)
    assert [e.user for e in log] == [1, 2]
    log.save_jsonl(tmp_path / "e.jsonl")
    back = EventLog.load_jsonl(tmp_path / "e.jsonl")
    assert list(back) == list(log)
    (tmp_path / "bad.jsonl").write_text('{"user": 1}\n')
    with pytest.raises(EngagementError):
        EventLog.load_jsonl(tmp_path / "bad.jsonl")


def test_bulk_load_empty():
    buf = EngagementBuffer()
    buf.bulk_load([], [], [], [])
    assert buf.dump() == [] and buf.users() == []
