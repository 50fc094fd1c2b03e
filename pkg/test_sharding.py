#!/usr/bin/env python3
"""
Tests: Sharding

ShardService runs shards inline or on a bounded pool of worker threads; results
come back in payload order whatever the pool size.
"""
import asyncio
import logging
import threading
import time

import pytest

from shard_service import ShardService


class SquareService(ShardService):
    """Squares numbers, optionally sleeping to force overlap between workers."""

    def __init__(self, delay: float = 0.0, **kwargs):
        super().__init__(**kwargs)
        self.delay = delay
        self.active = 0
        self.peak = 0
        self.lock = threading.Lock()

    def process_shard(self, shard_id, payload):
        with self.lock:
            self.active += 1
            self.peak = max(self.peak, self.active)
        time.sleep(self.delay)
        with self.lock:
            self.active -= 1
        if payload < 0:
            raise ValueError(f"negative payload {payload}")
        return payload * payload


@pytest.mark.parametrize("threads", [1, 2, 8])
def test_results_in_payload_order(threads):
    service = SquareService(threads=threads)
    assert service.map_shards(list(range(20))) == [x * x for x in range(20)]


def test_pool_is_bounded():
    service = SquareService(delay=0.02, threads=3)
    service.map_shards(list(range(12)))
    assert 1 <= service.peak <= 3


def test_callback_sees_every_shard():
    seen = []
    service = SquareService(threads=4, on_result=lambda shard_id, result: seen.append((shard_id, result)))
    service.map_shards([3, 1, 2])
    assert sorted(seen) == [(0, 9), (1, 1), (2, 4)]


def test_worker_errors_are_logged_and_raised(caplog):
    service = SquareService(threads=2, use_logging=True, logger='shards')
    with caplog.at_level(logging.ERROR, logger='shards'):
        with pytest.raises(ValueError, match="negative"):
            service.map_shards([1, -2, 3])
    assert "Error processing shard 1" in caplog.text


def test_print_mode_hides_debug(capsys):
    service = SquareService(threads=1)
    service.log_debug("hidden")
    service.log_info("shown")
    out = capsys.readouterr().out
    assert "hidden" not in out
    assert "[SquareService] shown" in out


def test_logger_by_name_or_instance():
    assert SquareService(use_logging=True).logger.name == 'SquareService'
    custom = logging.getLogger('custom')
    assert SquareService(use_logging=True, logger=custom).logger is custom
    assert SquareService().logger is None


def test_thread_count_validation():
    with pytest.raises(ValueError):
        SquareService(threads=0)
    assert SquareService(threads=None).threads >= 1


def test_worker_names_cycle_through_the_pool():
    service = SquareService(threads=2)
    assert service.worker_name(0) == "squareservice-worker-1"
    assert service.worker_name(3) == "squareservice-worker-2"


def test_map_shards_inside_event_loop_is_refused():
    service = SquareService(threads=2)

    async def nested():
        with pytest.raises(RuntimeError, match="run_shards"):
            service.map_shards([1, 2, 3])
        return await service.run_shards([1, 2, 3])

    assert asyncio.run(nested()) == [1, 4, 9]
