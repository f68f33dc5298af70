"""Round trip from a behavior spec to an event log and back.

Samples metacognitive segments from the Low default spec, writes them out as
a timestamped event log (one event every few seconds inside a segment, long
pauses between segments), then fits Gamma durations from the log and prints
fitted against configured parameters.

    python demos/recover_durations.py
"""

import csv
import tempfile
from pathlib import Path

import numpy as np

from novicesim.behavior import METACOG, default_spec, gamma_moments, sample_next_segment
from novicesim.metrics import fit_event_log, read_event_log


def write_log(path: Path, spec, sessions: int = 200, segments: int = 40, seed: int = 0) -> None:
    rng = np.random.default_rng(seed)
    with path.open("w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["session", "time", "action"])
        for s in range(sessions):
            t, prev = 0.0, None
            for _ in range(segments):
                seg = sample_next_segment(prev, spec, rng)
                for _ in range(seg.duration):
                    out.writerow([f"s{s}", f"{t:.1f}", seg.behavior.value])
                    t += 5.0
                t += 120.0  # gap longer than the merge window closes the episode
                prev = seg.behavior


def main() -> None:
    spec = default_spec("Low")
    with tempfile.TemporaryDirectory() as tmp:
        log = Path(tmp, "events.csv")
        write_log(log, spec)
        fit = fit_event_log(read_event_log(log))
    print(f"{'state':<12}{'mean':>8}{'fit mean':>10}{'cv':>8}{'fit cv':>8}{'episodes':>10}")
    for m in METACOG:
        mean, cv = gamma_moments(spec.durations[m])
        got = fit["durations"][m.value]
        print(f"{m.value:<12}{mean:>8.2f}{got['mean']:>10.2f}{cv:>8.3f}{got['cv']:>8.3f}{got['episodes']:>10}")


if __name__ == "__main__":
    main()
