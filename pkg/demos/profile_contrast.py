"""Simulate both profiles offline and compare their behavior and fidelity.

Runs canned-backend sessions for the Low and High defaults on the particle
problem, then prints the time spent in each metacognitive state, solve rates
and the fidelity report against the bundled reference distribution.

    python demos/profile_contrast.py [sessions_per_profile]
"""

import sys
from collections import Counter

from novicesim.agent import TutorKind
from novicesim.behavior import METACOG, ProfileLevel, default_spec
from novicesim.environment import ExecutionCache, load_problem
from novicesim.metrics import evaluate, load_reference, solve_rate
from novicesim.rng import derive_seed
from novicesim.session import SessionConfig, run_batch


def main(n: int = 20) -> None:
    problem = load_problem("particle")
    levels = (ProfileLevel.LOW, ProfileLevel.HIGH)
    cfgs = [
        SessionConfig(problem=problem, behav_profile=lv, persona_profile=lv, behavior_spec=default_spec(lv),
                      tutor_kind=TutorKind.ZPD, seed=derive_seed(2024, k))
        for lv in levels for k in range(n)
    ]
    result = run_batch(cfgs, parallelism=8, cache=ExecutionCache())
    groups = {lv: [t for t in result.trajectories if t.config["behav_profile"] == lv.value] for lv in levels}

    print(f"{'state':<12}" + "".join(f"{lv.value:>10}" for lv in levels))
    occupancy = {lv: Counter(s.metacog for t in ts for s in t.steps) for lv, ts in groups.items()}
    for m in METACOG:
        row = [occupancy[lv][m] / sum(occupancy[lv].values()) for lv in levels]
        print(f"{m.value:<12}" + "".join(f"{v:>10.1%}" for v in row))
    rates = {lv: solve_rate(ts) for lv, ts in groups.items()}
    print(f"{'solved':<12}" + "".join(f"{rates[lv]:>10.1%}" for lv in levels))

    gap = rates[ProfileLevel.HIGH] - rates[ProfileLevel.LOW]
    print("\n" + evaluate(result.trajectories, load_reference(), gap).render())


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 20)
