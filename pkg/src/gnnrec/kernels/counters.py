"""Per-kernel call instrumentation.

Every kernel invocation records calls, rows touched, bytes written, and
elapsed seconds under a dotted name ("sddmm.mul", "spmm.sum", ...).  The
counters back the execution-time breakdown emitted by the CLI and the
complexity checks on the model dataflow (edge-row vs. vertex-row matmuls,
one shared SDDMM per layer).
"""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class CounterEntry:
    calls: int = 0
    rows: int = 0
    bytes_written: int = 0
    seconds: float = 0.0


@dataclass
class KernelCounters:
    entries: dict[str, CounterEntry] = field(default_factory=dict)

    def record(self, name, rows=0, bytes_written=0, seconds=0.0):
        entry = self.entries.setdefault(name, CounterEntry())
        entry.calls += 1
        entry.rows += int(rows)
        entry.bytes_written += int(bytes_written)
        entry.seconds += float(seconds)

    def get(self, name):
        return self.entries.get(name, CounterEntry())

    def reset(self):
        self.entries.clear()

    def total(self, field_name, prefix=""):
        return sum(getattr(e, field_name)
                   for name, e in self.entries.items() if name.startswith(prefix))

    def time_breakdown(self):
        """name -> (seconds, fraction of total) for all recorded kernels."""
        total = sum(e.seconds for e in self.entries.values())
        return {name: (e.seconds, e.seconds / total if total else 0.0)
                for name, e in sorted(self.entries.items())}

    def to_csv(self, path):
        with open(path, "w") as f:
            f.write("kernel,calls,rows,bytes_written,seconds,fraction\n")
            breakdown = self.time_breakdown()
            for name, e in sorted(self.entries.items()):
                f.write(f"{name},{e.calls},{e.rows},{e.bytes_written},"
                        f"{e.seconds:.6f},{breakdown[name][1]:.4f}\n")


counters = KernelCounters()
