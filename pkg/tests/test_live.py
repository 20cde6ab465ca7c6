"""Wall-clock TCP smoke tests.

Everything here runs against real sockets and the real clock, so the
assertions are deliberately loose; the precise behavior is pinned by the
virtual-time suites.
"""

import time

from chronorpc.client import CancelResult
from chronorpc.live import LiveClient, LiveServer, ThreadScheduler, _FrameSplitter
from chronorpc.protocol import MILLIS, SECONDS, Operation
from chronorpc.server import ExecutionModel

TOLERANCE = 150 * MILLIS  # generous: CI boxes stall


def test_schedule_over_tcp():
    model = ExecutionModel(base=20 * MILLIS)
    with LiveServer("live1", model=model) as server, LiveClient() as client:
        client.connect("live1", server.address)
        core = client.core
        desired = core.now() + 400 * MILLIS
        out = core.schedule_at_completion("live1", Operation("noop"), desired)
        assert out.ok
        assert out.execution_time is not None
        assert abs(out.completion_error) < TOLERANCE
        # second round has a warm predictor
        desired = core.now() + 400 * MILLIS
        out = core.schedule_at_completion("live1", Operation("noop"), desired)
        assert abs(out.completion_error) < TOLERANCE
        assert server.core.log and server.core.decode_errors == 0


def test_cancel_over_tcp():
    with LiveServer("live1") as server, LiveClient() as client:
        client.connect("live1", server.address)
        core = client.core
        call = core.submit(
            "live1", Operation("noop"), core.now() + 5 * SECONDS
        )
        deadline = core.now() + 2 * SECONDS
        core.driver.wait_until(lambda: call.notification is not None, deadline)
        assert core.cancel("live1", call.message_id) is CancelResult.CANCELLED
        assert server.core.log == []


def test_immediate_value_round_trip():
    with LiveServer("live1") as server, LiveClient() as client:
        client.connect("live1", server.address)
        core = client.core
        core.schedule_raw(
            "live1", Operation("set-value", {"key": "k", "value": "v"})
        )
        core.schedule_raw("live1", Operation("commit"))
        out = core.schedule_raw("live1", Operation("get-value", {"key": "k"}))
        assert out.ok
        assert out.params == {"value": "v"}


def test_thread_scheduler_ordering():
    sched = ThreadScheduler()
    hits = []
    base = sched.now()
    try:
        sched.call_at(base + 60 * MILLIS, hits.append, "b")
        sched.call_at(base + 20 * MILLIS, hits.append, "a")
        timer = sched.call_at(base + 40 * MILLIS, hits.append, "x")
        timer.cancel()
        time.sleep(0.2)
        assert hits == ["a", "b"]
    finally:
        sched.close()


def test_frame_splitter_reassembles():
    splitter = _FrameSplitter()
    assert splitter.feed(b'{"a":1}\n{"b"') == [b'{"a":1}\n']
    assert splitter.feed(b":2}\n") == [b'{"b":2}\n']
    assert splitter.feed(b"") == []
