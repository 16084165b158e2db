"""Command-line verbs, exit codes, artifacts on disk."""
import json

import numpy as np
import pytest

from dr2s.cli import (EXIT_GAP_LIMIT, EXIT_INFEASIBLE, EXIT_INPUT,
                      EXIT_OPTIMAL, build_extensive_form, gen_illustrative,
                      main)
from dr2s.model import FirstStage, Instance, KIND_SINGLETON, save_instance
from instancegen import random_instance


def test_gen_check_solve_pipeline(tmp_path):
    inst = tmp_path / "ill.json"
    rep = tmp_path / "rep.json"
    tr = tmp_path / "tr.jsonl"
    assert main(["gen", "illustrative", "-o", str(inst)]) == EXIT_OPTIMAL
    assert main(["check", str(inst)]) == EXIT_OPTIMAL
    rc = main(["solve", str(inst), "--epsilon", "1e-6",
               "--report", str(rep), "--trace", str(tr)])
    assert rc == EXIT_OPTIMAL
    report = json.loads(rep.read_text())
    assert report["status"] == "optimal"
    assert report["objective"] == pytest.approx(10.6375, abs=1e-3)
    assert report["y_star"] == [1, 0]
    lines = tr.read_text().splitlines()
    assert len(lines) == report["iterations"]


def test_solve_initial_y_flag(tmp_path):
    inst = tmp_path / "ill.json"
    rep = tmp_path / "rep.json"
    main(["gen", "illustrative", "-o", str(inst)])
    rc = main(["solve", str(inst), "--initial-y", "1,1", "--epsilon", "1e-6",
               "--report", str(rep)])
    assert rc == EXIT_OPTIMAL
    assert json.loads(rep.read_text())["iterations"] == 2


def test_rfl_generation_is_seed_deterministic(tmp_path):
    a, b, c = (tmp_path / n for n in ("a.json", "b.json", "c.json"))
    args = ["gen", "rfl", "--sites", "2", "--budget", "1", "--scenarios", "2"]
    assert main(args + ["-o", str(a)]) == EXIT_OPTIMAL
    assert main(args + ["-o", str(b)]) == EXIT_OPTIMAL
    assert main(args + ["--seed", "9", "-o", str(c)]) == EXIT_OPTIMAL
    assert a.read_bytes() == b.read_bytes()
    assert a.read_bytes() != c.read_bytes()
    assert main(["check", str(a)]) == EXIT_OPTIMAL


def test_extensive_form_export(tmp_path):
    f = tmp_path / "r0.json"
    out = tmp_path / "ext.json"
    main(["gen", "rfl", "--sites", "2", "--budget", "1", "--scenarios", "2",
          "--dtv", "0", "-o", str(f)])
    assert main(["extensive", str(f), "-o", str(out)]) == EXIT_OPTIMAL
    d = json.loads(out.read_text())
    assert {"c", "lin_G", "lin_h", "socs", "lo", "hi", "integers"} <= set(d)
    assert len(d["c"]) == len(d["lo"]) == len(d["hi"])


def test_extensive_rejects_positive_radius(tmp_path):
    f = tmp_path / "r1.json"
    main(["gen", "rfl", "--sites", "2", "--budget", "1", "--scenarios", "2",
          "--dtv", "0.1", "-o", str(f)])
    assert main(["extensive", str(f), "-o", str(tmp_path / "x.json")]) == EXIT_INPUT


def test_input_error_exit_codes(tmp_path):
    assert main(["solve", str(tmp_path / "missing.json")]) == EXIT_INPUT
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["check", str(bad)]) == EXIT_INPUT
    assert main(["solve", str(bad)]) == EXIT_INPUT
    ill = tmp_path / "ill.json"
    main(["gen", "illustrative", "-o", str(ill)])
    assert main(["solve", str(ill), "--initial-y", "1,0,1"]) == EXIT_INPUT


def test_argparse_failures_map_to_input_code():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == EXIT_INPUT
    with pytest.raises(SystemExit) as exc:
        main(["gen", "rfl", "--sites", "2"])  # missing required flags
    assert exc.value.code == EXIT_INPUT


def test_infeasible_first_stage_exit(tmp_path, rng):
    inst = random_instance(rng, n=2)
    fs = FirstStage(c=inst.first_stage.c,
                    F=np.vstack([np.eye(2), -np.eye(2)]),
                    a=np.ones(4))
    import dataclasses
    bad = dataclasses.replace(inst, first_stage=fs)
    path = tmp_path / "infeasible.json"
    save_instance(bad, path)
    assert main(["check", str(path)]) == EXIT_INPUT  # validation rejects it
    assert main(["solve", str(path)]) in (EXIT_INFEASIBLE, EXIT_INPUT)


def test_time_limit_exit(tmp_path):
    f = tmp_path / "r.json"
    main(["gen", "rfl", "--sites", "2", "--budget", "1", "--scenarios", "2",
          "-o", str(f)])
    rc = main(["solve", str(f), "--epsilon", "1e-12",
               "--time-limit", "1e-9", "--report", str(tmp_path / "rep.json")])
    assert rc == EXIT_GAP_LIMIT


def test_solve_slack_augment_flag(tmp_path, rng):
    # instance with a dead recourse row only solvable through slack padding
    import dataclasses
    inst = random_instance(rng)
    sc = inst.scenarios[0]
    nx = sc.q.shape[0]
    n = inst.first_stage.n
    broken = dataclasses.replace(
        sc, W=np.vstack([sc.W, np.zeros((1, nx))]),
        T=np.vstack([sc.T, np.zeros((1, n))]),
        r=np.concatenate([sc.r, [0.5]]))
    bad = dataclasses.replace(inst, scenarios=(broken,) + inst.scenarios[1:])
    path = tmp_path / "broken.json"
    save_instance(bad, path)
    rc_plain = main(["solve", str(path), "--epsilon", "1e-6"])
    assert rc_plain != EXIT_OPTIMAL
    # the padded objective is penalty-scale, so let the default epsilon scale
    # with it instead of demanding 1e-6 absolute on a ~1e5 objective
    rc_padded = main(["solve", str(path), "--slack-augment",
                      "--report", str(tmp_path / "rep.json")])
    assert rc_padded == EXIT_OPTIMAL
    rep = json.loads((tmp_path / "rep.json").read_text())
    assert np.isfinite(rep["objective"])


def test_gen_illustrative_matches_library_constructor(tmp_path):
    from dr2s.model import instance_to_dict, load_instance
    path = tmp_path / "ill.json"
    main(["gen", "illustrative", "-o", str(path)])
    disk = load_instance(path)
    lib = gen_illustrative()
    assert json.dumps(instance_to_dict(disk), sort_keys=True) == \
        json.dumps(instance_to_dict(lib), sort_keys=True)
