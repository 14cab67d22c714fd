"""A scaled-down version of the swap simulation study.

For each flip probability we draw a handful of datasets, fit the model and
compare the mean absolute error of the corrected estimate with the error of
plain column means. The full study uses 100 replicates per cell; pass
``--replicates 100`` to run it.
"""

import argparse
import os

from mcdc import EmConfig
from mcdc.simulation import SimSpec, run_study

parser = argparse.ArgumentParser()
parser.add_argument("--replicates", type=int, default=5)
parser.add_argument("--study", type=int, default=1, choices=(1, 2, 3))
args = parser.parse_args()

spec = SimSpec.default(args.study, replicates=args.replicates)
result = run_study(spec, EmConfig(), n_jobs=os.cpu_count() or 1)

print(f"study {args.study}, {args.replicates} replicates per cell")
print(f"{'cell':>28} {'unaltered':>10} {'mcdc':>8} {'ratio':>7} {'g ok':>6}")
for c in result.cells:
    label = ", ".join(f"{k}={v:g}" for k, v in c.params.items())
    print(f"{label:>28} {c.mae_unaltered:10.3f} {c.mae_mcdc:8.3f} {c.mae_ratio:7.1f} "
          f"{c.frac_correct_g:6.0%}")
