"""Compare planners on a shared grid of seeded scenarios.

Every planner sees byte-identical environments, graphs, and budgets per cell,
so the summary tables are directly comparable (and bit-reproducible). Pass a
checkpoint path to add the learned policy to the lineup:

    python3 demos/planner_evaluation.py [checkpoint.etns]
"""

import sys
import time

from emberplan import decision_latency, evaluate, summary_table, toy_eval_spec


def main(argv):
    spec = toy_eval_spec(fuel_values=(1.0, 10.0), budgets=(6.0,),
                         n_instances=4, n_nodes=30, k_neighbors=6,
                         max_steps=24, checkpoint=argv[0] if argv else None)
    print(f"campaign: fuels {spec.fuel_values}, budget {spec.budgets[0]}, "
          f"{spec.n_instances} seeded instances per cell\n")

    planners = ["sampling", "random"] + (["policy"] if spec.checkpoint else [])
    for planner in planners:
        began = time.perf_counter()
        result = evaluate(spec, planner)
        took = time.perf_counter() - began
        print(f"--- {planner} ({took:.1f}s)")
        print(summary_table(result))

    if not spec.checkpoint:
        print("(no checkpoint given, skipping the learned planner; train one "
              "with `emberplan train --profile toy`)\n")

    median = decision_latency(n_nodes=60, k_neighbors=8, resolution=8,
                              embed_dim=16, n_heads=1, passes=20)
    print(f"greedy decision latency at desk scale: {1000 * median:.1f} ms "
          f"median over 20 passes")


if __name__ == "__main__":
    main(sys.argv[1:])
