import time
from collections import defaultdict
from contextlib import contextmanager

import psutil


class PerformanceMonitor:
    def __init__(self, logger=None):
        self.metrics = defaultdict(list)
        self.active_timers = {}
        self.start_time = time.time()
        self.logger = logger

    def start_timer(self, operation_name):
        """Start timing an operation"""
        self.active_timers[operation_name] = time.perf_counter()
        return operation_name

    def end_timer(self, operation_name):
        """End timing an operation and record the duration"""
        if operation_name in self.active_timers:
            duration = time.perf_counter() - self.active_timers.pop(operation_name)
            self.metrics[operation_name].append(duration)
            if self.logger:
                self.logger.log_performance(operation_name, duration * 1000)
            return duration
        return None

    @contextmanager
    def track(self, operation_name):
        """Time the enclosed block under operation_name"""
        self.start_timer(operation_name)
        try:
            yield
        finally:
            self.end_timer(operation_name)

    def record_memory_usage(self):
        """Record current memory usage"""
        try:
            process = psutil.Process()
            memory = psutil.virtual_memory()
            return {
                'rss_mb': process.memory_info().rss / (1024 * 1024),
                'percent': memory.percent,
                'available_mb': memory.available / (1024 * 1024)
            }
        except Exception:
            return {
                'rss_mb': 0,
                'percent': 0,
                'available_mb': 0
            }

    def get_performance_stats(self):
        """Get performance statistics"""
        stats = {'operations': self.get_component_breakdown()}
        stats['memory'] = self.record_memory_usage()
        stats['uptime_seconds'] = time.time() - self.start_time
        return stats

    def get_component_breakdown(self):
        """Get breakdown of performance by component"""
        breakdown = {}
        for operation, times in self.metrics.items():
            if times:
                breakdown[operation] = {
                    'count': len(times),
                    'avg_duration': sum(times) / len(times),
                    'min_duration': min(times),
                    'max_duration': max(times),
                    'total_duration': sum(times)
                }
        return breakdown

    def reset_metrics(self):
        """Reset all metrics"""
        self.metrics.clear()
        self.active_timers.clear()


def get_performance_monitor(logger=None):
    """Factory function to get performance monitor instance"""
    return PerformanceMonitor(logger)
