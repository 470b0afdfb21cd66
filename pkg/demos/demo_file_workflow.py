"""The same experiment as files: every stage reads and writes artifacts.

Runs the command-line workflow end to end in a scratch directory --
synthesize a benchmark, corrupt its labels, run the pipeline, infer on the
held-out domain, score the posteriors -- then prints what landed on disk.
Identical invocations are byte-identical, so every artifact here is safe
to diff, cache, or commit.
"""

import json
import os
import tempfile

from probefuse import cli


def run(argv):
    print("$ probefuse " + " ".join(argv))
    rc = cli.main(argv)
    assert rc == 0, f"exit code {rc}"


def main():
    scratch = tempfile.mkdtemp(prefix="probefuse_demo_")
    data = os.path.join(scratch, "data")
    noisy = os.path.join(scratch, "noisy")
    trained = os.path.join(scratch, "trained")
    posted = os.path.join(scratch, "posteriors")
    scored = os.path.join(scratch, "scores")

    cfg_path = os.path.join(scratch, "pipeline.json")
    with open(cfg_path, "w", encoding="utf-8") as fh:
        json.dump({"max_rounds": 2,
                   "split": {"gamma": 0.25},
                   "train": {"epochs": 30, "batch_size": 64},
                   "mixmatch": {"epochs": 8, "batch_size": 64}}, fh)

    synth_path = os.path.join(scratch, "synth.json")
    with open(synth_path, "w", encoding="utf-8") as fh:
        json.dump({"n_domains": 4, "n_per_domain": 400, "n_classes": 5,
                   "n_taps": 3, "tap_dims": [16, 32, 64],
                   "tap_signal": [0.55, 0.65, 0.8]}, fh)

    run(["synth", "--config", synth_path, "--seed", "0", "--out", data])
    run(["inject-noise", "--bank", os.path.join(data, "train.fbnk"),
         "--rate", "0.25", "--seed", "0", "--out", noisy])
    run(["pipeline", "--bank", os.path.join(noisy, "noisy.fbnk"),
         "--config", cfg_path, "--seed", "0", "--out", trained])
    run(["infer", "--state", os.path.join(trained, "state.json"),
         "--bank", os.path.join(data, "test.fbnk"), "--out", posted])
    run(["eval", "--posteriors", os.path.join(posted, "posteriors.fbnk-post"),
         "--bank", os.path.join(data, "test.fbnk"), "--out", scored])

    print(f"\nartifacts under {scratch}:")
    for root, _dirs, files in sorted(os.walk(scratch)):
        for name in sorted(files):
            path = os.path.join(root, name)
            rel = os.path.relpath(path, scratch)
            print(f"  {rel:40s} {os.path.getsize(path):8d} bytes")

    with open(os.path.join(trained, "state.json"), encoding="utf-8") as fh:
        state = json.load(fh)
    print(f"\nrounds run: {state['rounds']}")
    for h in state["history"]:
        print(f"  round {h['round']}: n_unlabeled={h['n_unlabeled']} "
              f"split_change={h['split_change']}")


if __name__ == "__main__":
    main()
