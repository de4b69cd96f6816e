#!/usr/bin/env python3
"""Benchmark the compiled packet-engine against the interpreted one.

Runs the same scenario on both kernels, verifies the traces are identical,
and reports events per second plus the speedup.

Usage:
  python benchmarks/bench_engine.py [--preset ware-40ms-10mbps] [--buffer 4]
                                    [--duration 100] [--repeat 3]
"""

import argparse
import time

from cclab import harness, packetsim


def bench(engine, scenario, repeat):
    best = float("inf")
    trace = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        trace = packetsim.run(scenario, engine=engine,
                              params=harness.PACKETSIM_PARAMS)
        best = min(best, time.perf_counter() - t0)
    return trace, best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--preset", default="ware-40ms-10mbps")
    parser.add_argument("--mix", default=None)
    parser.add_argument("--buffer", type=float, default=4.0)
    parser.add_argument("--duration", type=float, default=100.0)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()

    p = harness.PRESETS[args.preset]
    scenario = harness.build_scenario(
        args.preset, args.mix or p.default_mix, args.buffer,
        time_scale=args.duration / p.duration_s,
    )
    print(f"scenario: {args.preset} @ {args.buffer:g} BDP, "
          f"{scenario.duration_s:g} s simulated")

    interpreted = packetsim.load_engine("pure")
    pure_trace, pure_t = bench(interpreted, scenario, args.repeat)
    events = pure_trace.event_count
    print(f"interpreted: {pure_t:7.2f} s   {events / pure_t / 1e3:8.0f} k events/s")

    try:
        compiled = packetsim.load_engine("compiled")
    except RuntimeError as exc:
        print(f"compiled engine unavailable ({exc}); nothing to compare")
        return
    comp_trace, comp_t = bench(compiled, scenario, args.repeat)
    print(f"compiled:    {comp_t:7.2f} s   {events / comp_t / 1e3:8.0f} k events/s")
    print(f"speedup: {pure_t / comp_t:.2f}x over {events} events")

    identical = (
        comp_trace.cum_goodput_bytes == pure_trace.cum_goodput_bytes
        and comp_trace.cum_sent_bytes == pure_trace.cum_sent_bytes
        and comp_trace.queue_bytes == pure_trace.queue_bytes
        and comp_trace.extras["btlbw"] == pure_trace.extras["btlbw"]
    )
    print(f"traces bit-identical: {identical}")
    if not identical:
        raise SystemExit("backend mismatch: compiled and interpreted traces differ")


if __name__ == "__main__":
    main()
