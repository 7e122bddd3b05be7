from collections import deque


class ConvergenceMonitor:
    """Sliding window over fixed-point increments"""

    def __init__(self, window_size=50):
        self.window_size = window_size
        self.increments = deque(maxlen=window_size)
        self.history = []

    def monitor(self, increment, **diagnostics):
        """Record an increment and return the current statistics"""
        self.increments.append(increment)
        record = {'iteration': len(self.history) + 1, 'increment': increment}
        record.update(diagnostics)
        self.history.append(record)
        return self.get_statistics()

    def get_statistics(self):
        """Get current monitoring statistics"""
        if not self.increments:
            return {
                'count': 0,
                'last_increment': None,
                'min_increment': None,
                'contraction_estimate': None
            }

        values = list(self.increments)
        return {
            'count': len(self.history),
            'last_increment': values[-1],
            'min_increment': min(values),
            'contraction_estimate': self.contraction_estimate(),
            'window_size': self.window_size
        }

    def contraction_estimate(self):
        """Geometric mean ratio of consecutive increments in the window"""
        values = [v for v in self.increments if v > 0]
        if len(values) < 2:
            return None
        ratios = [b / a for a, b in zip(values[:-1], values[1:])]
        product = 1.0
        for ratio in ratios:
            product *= ratio
        return product ** (1.0 / len(ratios))

    def get_recent_trend(self, n=6):
        """Get trend of recent n increments"""
        if len(self.increments) < n:
            return "insufficient_data"

        recent = list(self.increments)[-n:]
        first_half = recent[:n // 2]
        second_half = recent[n // 2:]

        avg_first = sum(first_half) / len(first_half)
        avg_second = sum(second_half) / len(second_half)

        if avg_second < 0.95 * avg_first:
            return "improving"
        elif avg_second > 1.05 * avg_first:
            return "declining"
        else:
            return "stable"

    def is_oscillating(self, n=4):
        """True when the last n increments stopped decreasing"""
        if len(self.increments) < n:
            return False
        recent = list(self.increments)[-n:]
        rises = sum(1 for a, b in zip(recent[:-1], recent[1:]) if b >= a)
        return rises >= (n - 1) // 2 + 1 or self.get_recent_trend(n) == "declining"

    def reset(self):
        """Reset monitoring data"""
        self.increments.clear()
        self.history.clear()
