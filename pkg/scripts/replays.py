"""Replay both counterexamples and write their traces under out/replay-<name>."""
from gasper_confirm.cli import main
from gasper_confirm.scenarios import REPLAYS

for name in REPLAYS:
    print(f"== {name}")
    main(["replay", name, "--out", f"out/replay-{name}"])
