"""Smoke test for the nskt_py extension module."""

import json
import os
import subprocess
import sys
import tempfile

import nskt_py


def main():
    assert nskt_py.tukey_fence([5, 5, 5, 193, 193, 193]) == 475
    assert nskt_py.auc([0.9, 0.1, 0.5], [True, False, True]) == 1.0

    students = nskt_py.synthesize(n_students=12, n_skills=3, n_quizzes=5, max_len=8, seed=1)
    assert len(students) == 12
    assert all(len(s) >= 2 for s in students)

    try:
        nskt_py.tukey_fence([])
    except ValueError as e:
        assert "empty_input" in str(e)
    else:
        raise AssertionError("empty lengths must fail")

    cfg = json.loads(nskt_py.default_config())
    cfg.update(
        data={"kind": "synth", "n_students": 12, "n_skills": 3, "n_quizzes": 5, "max_len": 8, "seed": 1},
        caps=[8],
        ratios=[1.0],
        models=["responsible"],
        embedding_dim=3,
        rnn_layers=1,
        train={"learning_rate": 0.01, "max_epochs": 2},
    )
    table = nskt_py.run_grid(json.dumps(cfg))
    lines = [l for l in table.splitlines() if not l.startswith("#")]
    assert len(lines) == 2 and lines[1].startswith("responsible,8,8,1,ok")

    binary = os.environ.get("NSKT_BIN")
    if binary:
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "cfg.json")
            with open(path, "w") as f:
                json.dump(cfg, f)
            subprocess.run([binary, "train", "--config", path, "--out", tmp], check=True)
            model = nskt_py.Model.load(os.path.join(tmp, "checkpoint.json"))
            assert model.kind == "responsible"
            probs = model.predict(students[0])
            assert len(probs) == len(students[0]) - 1
            assert all(0.0 < p < 1.0 for p in probs)
            attribution = json.loads(model.attribution(students[0], 1))
            assert attribution["t_star"] == 1

    print("nskt_py smoke test ok")


if __name__ == "__main__":
    sys.exit(main())
