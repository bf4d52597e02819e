"""Memory-bandwidth microbenchmark harness.

Measures sequential and random access bandwidth for reads, writes, and
non-temporal writes across thread counts, access sizes, and NUMA placement
policies, and emits the results as CSV rows — machine-specific data, never
asserted against any absolute figure.  Worker threads touch disjoint,
access-size-aligned partitions of one region; random patterns follow a
seeded block permutation so two runs measure identical work.

Placement: when the host exposes several memory nodes the requested policy
is applied with mbind(2); otherwise (or when binding is not attempted) the
page-to-node assignment is kept as bookkeeping only and the record carries
an ``emulated`` flag.

CSV schema: ``run_id,pattern,op,access_size,threads,placement,nodes,gbps,error``
(re-running a sweep appends rows under a fresh run_id; failed cells keep the
error column and leave gbps empty).
"""

from __future__ import annotations

import ctypes
import glob
import os
import statistics
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels

_WORD = 8                      # measurement unit: 64-bit words
_PAGE = 4096                   # placement bookkeeping granularity
_SYS_MBIND = 237               # x86-64 syscall number
_MPOL_BIND = 2
_MPOL_INTERLEAVE = 3
_FALLBACK_LLC = 32 * 1024 * 1024


class MembenchError(Exception):
    pass


def available_memory_nodes():
    nodes = sorted(int(os.path.basename(p)[4:])
                   for p in glob.glob("/sys/devices/system/node/node[0-9]*"))
    return nodes or [0]


def detect_llc_bytes():
    """Largest cache reported by sysfs, or None when undetectable."""
    best = None
    for size_path in glob.glob("/sys/devices/system/cpu/cpu0/cache/index*/size"):
        try:
            text = open(size_path).read().strip()
        except OSError:
            continue
        mult = {"K": 1024, "M": 1024**2, "G": 1024**3}.get(text[-1], 1)
        digits = text[:-1] if text[-1] in "KMG" else text
        try:
            size = int(digits) * mult
        except ValueError:
            continue
        best = size if best is None else max(best, size)
    return best


def default_min_region_bytes():
    llc = detect_llc_bytes()
    return max(4 * llc, _FALLBACK_LLC) if llc else _FALLBACK_LLC


@dataclass
class PlacementPolicy:
    """interleaved = round-robin pages across the node set; blocked = one
    contiguous page block per node (equal by default, or explicit
    ``blocks`` as a list of (node, num_pages) covering the region once)."""

    kind: str = "interleaved"
    blocks: list[tuple[int, int]] | None = None

    def __post_init__(self):
        if self.kind not in ("interleaved", "blocked"):
            raise MembenchError(f"unknown placement kind: {self.kind!r}")

    def page_assignment(self, num_pages, node_set):
        nodes = list(node_set)
        if not nodes:
            raise MembenchError("placement needs a non-empty node set")
        if self.kind == "interleaved":
            return np.array(nodes, dtype=np.int64)[
                np.arange(num_pages, dtype=np.int64) % len(nodes)]
        if self.blocks is not None:
            if sum(n for _, n in self.blocks) != num_pages:
                raise MembenchError(
                    f"blocks cover {sum(n for _, n in self.blocks)} pages, "
                    f"region has {num_pages}")
            if any(node not in nodes for node, _ in self.blocks):
                raise MembenchError("block node outside the node set")
            parts = [np.full(n, node, dtype=np.int64) for node, n in self.blocks]
            return np.concatenate(parts) if parts else np.empty(0, np.int64)
        base = num_pages // len(nodes)
        rem = num_pages % len(nodes)
        sizes = [base + (1 if k < rem else 0) for k in range(len(nodes))]
        return np.concatenate([np.full(s, node, dtype=np.int64)
                               for node, s in zip(nodes, sizes)])


@dataclass
class PlacedRegion:
    buffer: np.ndarray
    policy: PlacementPolicy | None
    node_set: tuple
    page_nodes: np.ndarray | None
    emulated: bool


def _mbind(addr, length, mode, nodes):
    libc = ctypes.CDLL("libc.so.6", use_errno=True)
    maxnode = max(nodes) + 2
    nwords = (maxnode + 63) // 64
    mask = (ctypes.c_ulong * nwords)()
    for n in nodes:
        mask[n // 64] |= 1 << (n % 64)
    rc = libc.syscall(_SYS_MBIND, ctypes.c_void_p(addr),
                      ctypes.c_size_t(length), ctypes.c_int(mode),
                      mask, ctypes.c_ulong(maxnode), ctypes.c_uint(0))
    if rc != 0:
        err = ctypes.get_errno()
        raise MembenchError(f"mbind failed: {os.strerror(err)} (errno {err})")


def place(buffer, policy, node_set):
    """Bind the region's pages per policy when the host has the nodes; on a
    single-node host (or with binding unattempted) record the assignment as
    emulated bookkeeping and proceed."""
    available = available_memory_nodes()
    node_set = tuple(node_set) if node_set else (available[0],)
    missing = [n for n in node_set if n not in available]
    if missing:
        raise MembenchError(
            f"memory node(s) {missing} unavailable; host has {available}")
    num_pages = (buffer.nbytes + _PAGE - 1) // _PAGE
    page_nodes = policy.page_assignment(num_pages, node_set) if policy else None
    emulated = True
    if policy is not None and len(available) > 1 and len(node_set) > 1:
        addr = buffer.ctypes.data
        if policy.kind == "interleaved":
            _mbind(addr, buffer.nbytes, _MPOL_INTERLEAVE, node_set)
        else:
            # bind each contiguous page run to its node
            boundaries = np.flatnonzero(np.diff(page_nodes)) + 1
            starts = np.concatenate([[0], boundaries])
            ends = np.concatenate([boundaries, [page_nodes.size]])
            for s, e in zip(starts, ends):
                _mbind(addr + int(s) * _PAGE, int(e - s) * _PAGE,
                       _MPOL_BIND, [int(page_nodes[s])])
        emulated = False
    return PlacedRegion(buffer=buffer, policy=policy, node_set=node_set,
                        page_nodes=page_nodes, emulated=emulated)


@dataclass
class BenchSpec:
    pattern: str = "sequential"        # sequential | random
    op: str = "read"                   # read | write | nt_write
    access_size: int = 64              # bytes, multiple of 64, 64..4096
    threads: int = 1
    region_bytes: int = 64 * 1024 * 1024
    placement: PlacementPolicy | None = None
    node_set: tuple = ()
    repetitions: int = 5
    seed: int = 0
    min_region_bytes: int | None = None   # default: 4x detected LLC

    def validate(self):
        if self.pattern not in ("sequential", "random"):
            raise MembenchError(f"unknown pattern: {self.pattern!r}")
        if self.op not in ("read", "write", "nt_write"):
            raise MembenchError(f"unknown op: {self.op!r}")
        if self.access_size % 64 or not 64 <= self.access_size <= 4096:
            raise MembenchError(
                f"access_size must be a multiple of 64 in [64, 4096], "
                f"got {self.access_size}")
        if self.threads < 1:
            raise MembenchError("threads must be >= 1")
        if self.repetitions < 1:
            raise MembenchError("repetitions must be >= 1")
        floor = (self.min_region_bytes if self.min_region_bytes is not None
                 else default_min_region_bytes())
        if self.region_bytes < floor:
            raise MembenchError(
                f"region of {self.region_bytes} bytes is below the cache-size "
                f"floor of {floor} (must be well above the last-level cache)")


@dataclass
class BenchRecord:
    spec: BenchSpec
    bytes_moved: int
    elapsed_seconds: float      # repetitions x median per-repetition time
    bandwidth: float            # bytes per second = bytes_moved / elapsed
    gbps: float
    rep_seconds: list[float] = field(default_factory=list)
    nt_effective: bool = False  # streaming stores actually used
    emulated_placement: bool = True
    checksum: int = 0

    def best_gbps(self):
        """Best rate across repetitions (STREAM-style): the achievable
        bandwidth estimate, robust to scheduler noise on shared hosts."""
        per_rep = self.bytes_moved / self.spec.repetitions
        return per_rep / min(self.rep_seconds) / 1e9

    def csv_fields(self):
        s = self.spec
        placement = s.placement.kind if s.placement else "none"
        nodes = "+".join(str(n) for n in s.node_set) if s.node_set else "local"
        return [s.pattern, s.op, str(s.access_size), str(s.threads),
                placement, nodes, f"{self.gbps:.4f}"]


def _worker_partitions(total_words, threads, words_per_access):
    """Contiguous per-worker word ranges, each a whole number of accesses."""
    blocks_total = total_words // words_per_access
    parts = []
    for w in range(threads):
        b0 = (w * blocks_total) // threads
        b1 = ((w + 1) * blocks_total) // threads
        if b1 > b0:
            parts.append((b0, b1))
    return parts


def run_bench(spec, buffer=None):
    """Execute one measurement cell and return its record.

    ``buffer`` optionally reuses a preallocated uint64 region (a sweep shares
    one buffer across cells so every cell measures identical physical pages;
    fresh allocations can differ in huge-page backing and skew comparisons).
    """
    spec.validate()
    backend = kernels.backend_module()
    nt_possible = backend.streaming_stores_available()
    use_nt = spec.op == "nt_write" and nt_possible
    if buffer is None:
        words = np.ones(spec.region_bytes // _WORD, dtype=np.uint64)
    else:
        if buffer.dtype != np.uint64 or buffer.nbytes < spec.region_bytes:
            raise MembenchError("shared buffer must be uint64 and at least "
                               "region_bytes long")
        words = buffer[:spec.region_bytes // _WORD]
    placed = place(words.view(np.uint8), spec.placement, spec.node_set) \
        if spec.placement is not None or spec.node_set else \
        PlacedRegion(words, None, tuple(spec.node_set), None, True)
    wpb = spec.access_size // _WORD
    parts = _worker_partitions(words.size, spec.threads, wpb)
    if not parts:
        raise MembenchError("region too small for one access per worker")
    orders = None
    if spec.pattern == "random":
        orders = []
        for w, (b0, b1) in enumerate(parts):
            rng = np.random.default_rng([spec.seed, w])
            orders.append(b0 + rng.permutation(b1 - b0).astype(np.int64))
    accesses = sum(b1 - b0 for b0, b1 in parts)
    results = [0] * len(parts)

    def touch(w):
        b0, b1 = parts[w]
        if spec.pattern == "sequential":
            if spec.op == "read":
                results[w] = backend.mem_seq_read(words, b0 * wpb, b1 * wpb)
            else:
                backend.mem_seq_write(words, b0 * wpb, b1 * wpb, 0x55AA55AA,
                                      use_nt)
        else:
            if spec.op == "read":
                results[w] = backend.mem_rand_read(words, orders[w], wpb)
            else:
                backend.mem_rand_write(words, orders[w], wpb, 0x55AA55AA,
                                       use_nt)

    rep_seconds = []
    checksum = 0
    for _ in range(spec.repetitions):
        threads = [threading.Thread(target=touch, args=(w,))
                   for w in range(len(parts))]
        t0 = time.perf_counter()
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        rep_seconds.append(time.perf_counter() - t0)
        checksum ^= sum(results)
    bytes_moved = spec.repetitions * accesses * spec.access_size
    elapsed = spec.repetitions * statistics.median(rep_seconds)
    bandwidth = bytes_moved / elapsed
    return BenchRecord(spec=spec, bytes_moved=bytes_moved,
                       elapsed_seconds=elapsed, bandwidth=bandwidth,
                       gbps=bandwidth / 1e9, rep_seconds=rep_seconds,
                       nt_effective=use_nt,
                       emulated_placement=placed.emulated, checksum=checksum)


_CSV_HEADER = "run_id,pattern,op,access_size,threads,placement,nodes,gbps,error\n"


def _next_run_id(path):
    if not os.path.exists(path):
        return 0
    last = -1
    with open(path) as f:
        for line in f:
            head = line.split(",", 1)[0]
            if head.isdigit():
                last = max(last, int(head))
    return last + 1


def sweep(base_spec, patterns=None, ops=None, access_sizes=None,
          thread_counts=None, placements=None, csv_path=None,
          cooldown_s=0.1, progress=None):
    """Cartesian product of the given axes (each defaulting to the base
    spec's single value).  Per-cell failures become error rows and the sweep
    continues.  Returns (records, rows)."""
    axes = {
        "pattern": patterns if patterns is not None else [base_spec.pattern],
        "op": ops if ops is not None else [base_spec.op],
        "access_size": (access_sizes if access_sizes is not None
                        else [base_spec.access_size]),
        "threads": (thread_counts if thread_counts is not None
                    else [base_spec.threads]),
        "placement": placements if placements is not None else [base_spec.placement],
    }
    for name, values in axes.items():
        if not list(values):
            raise MembenchError(f"empty sweep axis: {name}")
    shared = np.ones(base_spec.region_bytes // _WORD, dtype=np.uint64)
    records, rows = [], []
    first = True
    for pattern in axes["pattern"]:
        for op in axes["op"]:
            for size in axes["access_size"]:
                for threads in axes["threads"]:
                    for placement in axes["placement"]:
                        if not first and cooldown_s:
                            time.sleep(cooldown_s)
                        first = False
                        spec = BenchSpec(
                            pattern=pattern, op=op, access_size=size,
                            threads=threads, region_bytes=base_spec.region_bytes,
                            placement=placement, node_set=base_spec.node_set,
                            repetitions=base_spec.repetitions,
                            seed=base_spec.seed,
                            min_region_bytes=base_spec.min_region_bytes)
                        try:
                            record = run_bench(spec, buffer=shared)
                            records.append(record)
                            rows.append(record.csv_fields() + [""])
                        except MembenchError as exc:
                            rows.append([pattern, op, str(size), str(threads),
                                         placement.kind if placement else "none",
                                         "+".join(map(str, base_spec.node_set))
                                         or "local", "", str(exc)])
                        if progress:
                            progress(rows[-1])
    if csv_path:
        run_id = _next_run_id(csv_path)
        new_file = not os.path.exists(csv_path)
        with open(csv_path, "a") as f:
            if new_file:
                f.write(_CSV_HEADER)
            for row in rows:
                f.write(f"{run_id}," + ",".join(row) + "\n")
    return records, rows


def write_host_metadata(path):
    """Key-value sidecar describing the measurement host."""
    llc = detect_llc_bytes()
    thp = None
    try:
        raw = open("/sys/kernel/mm/transparent_hugepage/enabled").read()
        thp = raw[raw.index("[") + 1:raw.index("]")] if "[" in raw else raw.strip()
    except (OSError, ValueError):
        pass
    pairs = {
        "cpu.count": os.cpu_count() or 1,
        "memory.nodes": "+".join(str(n) for n in available_memory_nodes()),
        "cache.llc_bytes": llc if llc is not None else "unknown",
        "page.bytes": _PAGE,
        "nt_stores.available": kernels.streaming_stores_available(),
        "thp.enabled": thp if thp is not None else "unknown",
        "kernel.backend": kernels.get_backend(),
    }
    with open(path, "w") as f:
        for key in sorted(pairs):
            f.write(f"{key} = {pairs[key]}\n")
    return pairs
