#!/usr/bin/env python3
"""Profile one of the reference models and show where the time goes.

Usage: python scripts/profile_model.py [lenet5|vgg16|inceptionv3] [--csv out.csv]
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

import numpy as np

from modelzoo.builders import MODELS, count_params, random_init
from modelzoo.graph import execute, report_to_csv
from modelzoo.tensor import Tensor


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("model", choices=sorted(MODELS), nargs="?", default="lenet5")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--csv", help="write the full per-node profile here")
    parser.add_argument("--top", type=int, default=10, help="slowest nodes to print")
    args = parser.parse_args()

    spec = MODELS[args.model]
    graph = spec.build()
    graph.params = random_init(graph, args.seed)
    count, nbytes = count_params(graph)
    print(f"{spec.name}: {spec.node_count(graph)} nodes, {count:,} parameters "
          f"({nbytes / 2**20:.1f} MiB)")

    x = Tensor(np.random.default_rng(args.seed)
               .standard_normal(spec.input_shape).astype(np.float32))
    _, report = execute(graph, {spec.input_port: x}, profile=True)

    if args.csv:
        Path(args.csv).write_text(report_to_csv(report))
        print(f"wrote {len(report.records)} rows to {args.csv}")

    print(f"total wall time: {report.total_us / 1000:.1f} ms")
    slowest = sorted(report.records, key=lambda r: r.latency_us, reverse=True)
    print(f"\nslowest {args.top} nodes:")
    for r in slowest[:args.top]:
        shape = "x".join(str(d) for d in r.output_shape)
        share = 100.0 * r.latency_us / max(report.total_us, 1)
        print(f"  {r.latency_us:>9} us  {share:5.1f}%  {r.op:<7} {r.name:<12} -> {shape}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
