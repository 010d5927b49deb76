"""Regenerate the bundled demo dataset under ``src/gtfm/data``."""

from pathlib import Path

from gtfm.series import write_frame, write_scenarios
from gtfm.simstudy import demo_dataset

OUT = Path(__file__).resolve().parents[1] / "src" / "gtfm" / "data"


def main():
    frame, scenarios = demo_dataset()
    OUT.mkdir(parents=True, exist_ok=True)
    write_frame(frame, OUT / "demo_lgd.csv")
    write_scenarios(scenarios, OUT / "demo_scenarios.csv")
    print(f"wrote {OUT / 'demo_lgd.csv'} and {OUT / 'demo_scenarios.csv'}")


if __name__ == "__main__":
    main()
