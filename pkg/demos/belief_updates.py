"""Fold measurements into the space-time Gaussian process belief.

A walker crosses the unit square taking point measurements of a simulated
fire. Each batch of observations tightens the posterior; the covariance trace
tracks exactly how much uncertainty is left, and the time length scale decides
how quickly old measurements stop helping.
"""

import numpy as np

from emberplan import (KernelParams, Observation, RandomizationSpec,
                       covariance_trace, intensity_at, make_belief,
                       posterior_marginals, rmse, sample_environment,
                       simulate_field, update_belief)


def main():
    rng = np.random.default_rng(11)
    env = sample_environment(rng, RandomizationSpec(
        fuel_range=(6.0, 6.0), wind_speed=5.0, fire_count_range=(1, 1),
        horizon=17))
    field = simulate_field(env, horizon=17, resolution=16)

    belief = make_belief(resolution=16)
    print(f"prior trace at t=0: {covariance_trace(belief, 0.0):.2f} "
          f"(256 lattice points, unit signal variance)")
    print()

    # diagonal sweep, four measurements per step
    print(f"{'t':>3} {'observations':>12} {'trace':>8} {'rmse':>7}")
    for t in range(0, 9):
        frac = t / 8.0
        for offset in np.linspace(-0.06, 0.06, 4):
            x = float(np.clip(frac + offset, 0.0, 1.0))
            y = float(np.clip(frac - offset, 0.0, 1.0))
            value = intensity_at(field, (x, y), t)
            belief = update_belief(belief, Observation((x, y), float(t), value))
        print(f"{t:>3} {belief.n_observations:>12} "
              f"{covariance_trace(belief, float(t)):>8.2f} "
              f"{rmse(belief, field, float(t)):>7.3f}")

    # posterior slice across the middle of the square
    xs = np.linspace(0.0, 1.0, 9)
    queries = np.column_stack([xs, np.full(9, 0.5), np.full(9, 8.0)])
    mean, var = posterior_marginals(belief, queries)
    print("\nposterior along y=0.5 at t=8:")
    for x, m, v in zip(xs, mean, var):
        print(f"  x={x:.2f}  mean {m:.3f}  std {np.sqrt(v):.3f}")

    # a short time memory makes the same observations age out faster
    print("\ntrace at t=12 given the same observations:")
    for lt in (2.0, 10.0, 50.0):
        params = KernelParams(length_scale_time=lt)
        aged = make_belief(params, resolution=16)
        aged = aged.with_observations(list(belief.observations))
        print(f"  time length scale {lt:>5}: {covariance_trace(aged, 12.0):.2f}")


if __name__ == "__main__":
    main()
