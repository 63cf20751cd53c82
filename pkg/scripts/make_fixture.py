"""Regenerate the small simulated mixture bundled under tests/fixtures.

Writes ``fixture_observed.wav``, ``fixture_early.wav`` and ``fixture_late.wav``
(16 kHz, float32) plus ``fixture_metrics.csv`` holding the metrics of the
unprocessed observation against the early reference.
"""

import argparse
import csv
from pathlib import Path

from vacewpe import metrics, room_sim
from vacewpe.audio_io import write_wav

SEED = 1
DURATION = 4.0


def build(out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    rir = room_sim.simulate_rir(room_sim.tuned_room_spec(SEED))
    speech = room_sim.speech_like(DURATION, 16000, SEED)
    ex = room_sim.generate_example(room_sim.DatagenConfig([speech], [rir], peak_norm=0.5), SEED)
    for name, wave in (("observed", ex.observed), ("early", ex.early_ref), ("late", ex.late_ref)):
        write_wav(wave, out / f"fixture_{name}.wav")
    report = metrics.evaluate(ex.early_ref, ex.observed)
    with open(out / "fixture_metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("utt_id",) + metrics.METRIC_NAMES)
        w.writerow(["fixture"] + [f"{v:.6f}" for v in report.as_row()])


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path(__file__).resolve().parent.parent / "tests" / "fixtures")
    build(ap.parse_args().out)
