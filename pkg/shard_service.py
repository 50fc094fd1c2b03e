#!/usr/bin/env python3
"""
Shard Service Base Class

Common base class for all sharded workloads (solver restarts, node classification).
Provides shared functionality for worker management, dispatching shards and logging.
"""
import asyncio
import logging
import os
from abc import ABC, abstractmethod
from datetime import datetime
from typing import Any, Callable, List, Optional, Sequence, Union


class ShardService(ABC):
    """
    Abstract base class for services that split their work into independent shards.

    Provides common functionality:
    - Bounded worker pool (asyncio + threads)
    - Ordered result collection
    - Per-shard result callback
    - Configurable logging (print or logger)

    Subclasses must implement:
    - process_shard(): How to handle a single shard
    """

    def __init__(
        self,
        threads: Optional[int] = None,
        on_result: Optional[Callable[[int, Any], None]] = None,
        logger: Optional[Union[logging.Logger, str]] = None,
        use_logging: bool = False
    ):
        """
        Initialize the shard service.

        Args:
            threads: Maximum number of concurrent workers. None uses all available CPUs
            on_result: Optional callback called with (shard_id, result) when a shard finishes
            logger: Optional logger instance or logger name. If None, uses service class name
            use_logging: If True, use logging.Logger; if False, use print (default)
        """
        if threads is not None and threads < 1:
            raise ValueError(f"threads must be a positive integer, got {threads}")
        self.threads = threads or os.cpu_count() or 1
        self.on_result = on_result
        self.use_logging = use_logging

        # Setup logger
        if use_logging:
            if isinstance(logger, logging.Logger):
                self.logger = logger
            else:
                logger_name = logger or self.__class__.__name__
                self.logger = logging.getLogger(logger_name)
        else:
            self.logger = None

    def worker_name(self, shard_id: int) -> str:
        """Name used in log lines for the worker handling a shard."""
        return f"{self.__class__.__name__.lower()}-worker-{shard_id % self.threads + 1}"

    def map_shards(self, payloads: Sequence[Any]) -> List[Any]:
        """
        Run process_shard over every payload and return the results in payload order.

        Args:
            payloads: One payload per shard

        Returns:
            List of results, results[i] belongs to payloads[i]
        """
        if self.threads == 1 or len(payloads) <= 1:
            results = []
            for shard_id, payload in enumerate(payloads):
                results.append(self._run_one(shard_id, payload))
            return results
        try:
            asyncio.get_running_loop()
        except RuntimeError:
            return asyncio.run(self.run_shards(payloads))
        raise RuntimeError("map_shards called inside a running event loop; await run_shards instead")

    async def run_shards(self, payloads: Sequence[Any]) -> List[Any]:
        """
        Dispatch shards to at most `threads` concurrent workers.

        Args:
            payloads: One payload per shard

        Returns:
            List of results in payload order
        """
        semaphore = asyncio.Semaphore(self.threads)

        async def run_bounded(shard_id: int, payload: Any) -> Any:
            async with semaphore:
                return await asyncio.to_thread(self._run_one, shard_id, payload)

        self.log_debug(f"Dispatching {len(payloads)} shards to {self.threads} workers")
        return list(await asyncio.gather(
            *(run_bounded(shard_id, payload) for shard_id, payload in enumerate(payloads))
        ))

    def _run_one(self, shard_id: int, payload: Any) -> Any:
        try:
            result = self.process_shard(shard_id, payload)
        except Exception as e:
            self.log_error(f"[{self.worker_name(shard_id)}] Error processing shard {shard_id}: {e}")
            raise

        if self.on_result:
            self.on_result(shard_id, result)
        else:
            self._default_result_handler(shard_id, result)
        return result

    def _default_result_handler(self, shard_id: int, result: Any):
        """Default handler when no on_result callback is provided."""
        self.log_debug(f"[{self.worker_name(shard_id)}] Finished shard {shard_id}")

    def log(self, message: str, level: str = 'info'):
        """
        Log a message with timestamp and service name.

        Args:
            message: Message to log
            level: Log level ('debug', 'info', 'warning', 'error', 'critical')
        """
        if self.use_logging and self.logger:
            # Use proper logging
            log_method = getattr(self.logger, level.lower(), self.logger.info)
            log_method(message)
        elif level.lower() != 'debug':
            # Use print with timestamp and service name
            timestamp = datetime.now().strftime('%H:%M:%S')
            service_name = self.__class__.__name__
            print(f"[{timestamp}] [{service_name}] {message}")

    def log_debug(self, message: str):
        """Log a debug message."""
        self.log(message, level='debug')

    def log_info(self, message: str):
        """Log an info message."""
        self.log(message, level='info')

    def log_warning(self, message: str):
        """Log a warning message."""
        self.log(message, level='warning')

    def log_error(self, message: str):
        """Log an error message."""
        self.log(message, level='error')

    def log_critical(self, message: str):
        """Log a critical message."""
        self.log(message, level='critical')

    @abstractmethod
    def process_shard(self, shard_id: int, payload: Any) -> Any:
        """
        Process a single shard. Must be implemented by subclasses.

        Args:
            shard_id: Position of the shard in the dispatched sequence
            payload: Shard payload
        """
        pass
