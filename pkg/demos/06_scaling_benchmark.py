"""
Does the fusion stage scale linearly?
=====================================

Time the score network, the sort and gather, and the bidirectional scan
at doubling token counts and report the ratio between neighbours.
Ratios near 2 mean linear time.  Wall-clock numbers vary by machine.
"""

# %%
from priofuse.pgmf import complexity_probe

rep = complexity_probe([2 ** 12, 2 ** 13, 2 ** 14], repeats=3)
for row in rep["rows"]:
    print(f"N={row['n']:6d}  psn {row['psn'] * 1e3:7.2f} ms  "
          f"sort {row['sort_serialize'] * 1e3:7.2f} ms  ssm {row['ssm'] * 1e3:7.2f} ms")
for stage, ratios in rep["ratios"].items():
    print(stage, [round(r, 2) for r in ratios])
print("sort used:", rep["sort_method"])
