"""Run a short desk-scale training loop end to end.

Sixty-four episodes is nowhere near convergence; the point is to watch the
full machinery turn over in seconds: seeded rollouts, trace-drop rewards, the
dynamics-model loss, PPO updates, and a checkpoint that reloads bit-for-bit.
"""

import tempfile
from pathlib import Path

import numpy as np

from emberplan import load_model, toy_train_config, train


def main():
    config = toy_train_config(total_episodes=64, batch_size=32, master_seed=1)
    print(f"profile: {config.n_nodes}-node graphs, {config.resolution}x"
          f"{config.resolution} belief grids, {config.embed_dim}-wide policy")
    print(f"running {config.total_episodes} episodes in batches of "
          f"{config.batch_size} (the full toy profile runs 1984)\n")

    with tempfile.TemporaryDirectory() as tmp:
        policy_params, dpm_params, log = train(config, checkpoint_dir=tmp)

        for batch in range(max(r["batch"] for r in log) + 1):
            rows = [r for r in log if r["batch"] == batch]
            ret = np.mean([r["return"] for r in rows])
            dpm = np.nanmean([r["dpm_loss"] for r in rows])
            trace = np.mean([r["final_trace"] for r in rows])
            print(f"batch {batch}: mean return {ret:.3f}, "
                  f"dynamics loss {dpm:.4f}, mean final trace {trace:.2f}")

        steps = sum(r["n_decisions"] for r in log)
        budgets = [r["budget"] for r in log]
        print(f"\n{len(log)} episodes, {steps} decisions, budgets "
              f"{min(budgets):.2f}..{max(budgets):.2f}")

        final = Path(tmp) / "checkpoint_final.etns"
        pp, dp, meta = load_model(final)
        drift = max(float(np.max(np.abs(pp.values[k].value
                                        - policy_params.values[k].value)))
                    for k in policy_params.values)
        print(f"checkpoint {final.name}: meta {meta}, "
              f"reload drift {drift:.1e}")


if __name__ == "__main__":
    main()
