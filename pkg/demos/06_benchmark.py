"""Comparison throughput on a synthetic gallery (smaller than the acceptance run)."""

import json
import sys

from fdd.bench import run_bench

n = int(sys.argv[1]) if len(sys.argv) > 1 else 20_000
rep = run_bench(n=n, c=6, n_probes=64, threads=1, extract_samples=1)
print(json.dumps(rep.as_dict(), indent=2))
print(f"float: {rep.float_s_per_pair:.2e} s/pair, binary: {rep.binary_s_per_pair:.2e} s/pair")
