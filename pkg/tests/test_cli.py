import csv
import json
import os

import pytest

from app import main
from navattack.navgraph import shortest_path
from navattack.worldgen import load_world


def _read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


def _list_files(directory):
    found = []
    for root, _, files in os.walk(directory):
        for name in files:
            found.append(os.path.relpath(os.path.join(root, name), directory))
    return sorted(found)


@pytest.fixture(scope="module")
def env_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "env"
    assert main(["gen-env", "--seed", "7", "--nodes", "40", "--landmarks", "4", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def route(env_dir):
    world = load_world(str(env_dir))
    g = world.graph
    placed = set()
    for label in world.landmark_labels:
        placed.add(next(n for n, gt in world.ground_truth.items() if gt == label))
    free = [nid for nid in g.node_ids if nid not in placed]
    start = free[0]
    target = max(free, key=lambda nid: (len(shortest_path(g, start, nid)), -nid))
    return start, target, ",".join(world.landmark_labels[:2])


@pytest.fixture(scope="module")
def attack_dir(env_dir, route, tmp_path_factory):
    start, target, landmarks = route
    out = tmp_path_factory.mktemp("cli") / "attacked"
    code = main(["attack", "--graph", str(env_dir), "--start", str(start), "--target", str(target),
                 "--landmarks", landmarks, "--max-steps", "400", "--workers", "2", "--out", str(out)])
    assert code == 0
    return out


def test_gen_env_is_byte_identical(env_dir, tmp_path):
    again = tmp_path / "again"
    assert main(["gen-env", "--seed", "7", "--nodes", "40", "--landmarks", "4", "--out", str(again)]) == 0
    files = _list_files(str(env_dir))
    assert "manifest.json" in files and "world.json" in files
    assert files == _list_files(str(again))
    for name in files:
        assert (env_dir / name).read_bytes() == (again / name).read_bytes()


def test_gen_env_infeasible_exits_2(tmp_path):
    assert main(["gen-env", "--nodes", "3", "--landmarks", "4", "--out", str(tmp_path / "x")]) == 2
    assert not (tmp_path / "x").exists()


def test_plan_errors_exit_2(env_dir):
    assert main(["plan", "--graph", str(env_dir), "--landmarks", " , ", "--start", "0"]) == 2
    assert main(["plan", "--graph", str(env_dir), "--landmarks", "a red door", "--start", "999"]) == 2


def test_plan_writes_json(env_dir, tmp_path, route):
    start, _, landmarks = route
    out = tmp_path / "plan.json"
    assert main(["plan", "--graph", str(env_dir), "--landmarks", landmarks, "--start", str(start),
                 "--out", str(out)]) == 0
    payload = json.loads(out.read_text())
    assert payload["format_version"] == 1
    assert payload["plan"]["waypoints"][0] == start
    assert payload["plan"]["landmarks"] == landmarks.split(",")


def test_attack_target_equal_to_start_exits_2(env_dir, tmp_path, route):
    start, _, landmarks = route
    code = main(["attack", "--graph", str(env_dir), "--start", str(start), "--target", str(start),
                 "--landmarks", landmarks, "--out", str(tmp_path / "a")])
    assert code == 2


def test_attack_writes_graph_and_report(attack_dir, env_dir, route, tmp_path):
    start, target, landmarks = route
    files = _list_files(str(attack_dir))
    assert "attack_report.json" in files
    report = json.loads((attack_dir / "attack_report.json").read_text())
    assert report["plan"]["target"] == target
    assert report["touched_images"]

    rerun = tmp_path / "rerun"
    assert main(["attack", "--graph", str(env_dir), "--start", str(start), "--target", str(target),
                 "--landmarks", landmarks, "--max-steps", "400", "--workers", "1", "--out", str(rerun)]) == 0
    for name in files:
        if name != "attack_report.json":
            assert (attack_dir / name).read_bytes() == (rerun / name).read_bytes()


def test_detect_clean_against_clean(env_dir, tmp_path):
    out = tmp_path / "det"
    assert main(["detect", "--clean", str(env_dir), "--modified", str(env_dir), "--sigmas", "1e-4,1e-2",
                 "--trials", "1", "--out", str(out)]) == 0
    payload = json.loads((out / "detection.json").read_text())
    assert payload["best_accuracy"] == pytest.approx(0.5)
    rows = _read_csv(out / "sweep.csv")
    assert rows[0] == ["sigma", "mean_clean", "mean_modified", "best_accuracy"]
    assert len(rows) == 3


def test_detect_mismatched_graphs_exit_2(env_dir, tmp_path):
    other = tmp_path / "other"
    assert main(["gen-env", "--seed", "8", "--nodes", "30", "--out", str(other)]) == 0
    assert main(["detect", "--clean", str(env_dir), "--modified", str(other), "--sigmas", "1e-3",
                 "--trials", "1", "--out", str(tmp_path / "det")]) == 2


def test_detect_single_graph(attack_dir, tmp_path, route):
    start, target, _ = route
    out = tmp_path / "single"
    assert main(["detect", "--graph", str(attack_dir), "--sigma", "1e-2", "--threshold", "1e-9",
                 "--trials", "1", "--path", f"{start},{target}", "--out", str(out)]) == 0
    payload = json.loads((out / "detection.json").read_text())
    assert payload["path_flagged"] is True
    assert payload["metrics"]["recall"] == 1.0


def test_evaluate_missing_report_exits_2(env_dir, attack_dir, tmp_path, route):
    start, _, landmarks = route
    code = main(["evaluate", "--clean-graph", str(env_dir), "--attacked-graph", str(attack_dir),
                 "--attack-report", str(tmp_path / "missing.json"), "--landmarks", landmarks,
                 "--start", str(start), "--out", str(tmp_path / "ev")])
    assert code == 2


def test_evaluate_single_attack(env_dir, attack_dir, tmp_path, route):
    start, _, landmarks = route
    out = tmp_path / "ev"
    assert main(["evaluate", "--clean-graph", str(env_dir), "--attacked-graph", str(attack_dir),
                 "--attack-report", str(attack_dir / "attack_report.json"), "--landmarks", landmarks,
                 "--start", str(start), "--out", str(out)]) == 0
    rows = _read_csv(out / "table1.csv")
    assert [r[0] for r in rows[1:]] == ["route_modification_success", "landmark_matching_rate",
                                        "path_efficiency", "arrival_success"]
    evaluation = json.loads((out / "evaluation.json").read_text())["evaluation"]
    assert 0.0 <= evaluation["landmark_matching_rate"] <= 1.0


def test_evaluate_null_attack(env_dir, attack_dir, tmp_path, route):
    start, _, landmarks = route
    out = tmp_path / "null"
    assert main(["evaluate", "--clean-graph", str(env_dir), "--attacked-graph", str(env_dir),
                 "--attack-report", str(attack_dir / "attack_report.json"), "--landmarks", landmarks,
                 "--start", str(start), "--out", str(out)]) == 0
    evaluation = json.loads((out / "evaluation.json").read_text())["evaluation"]
    assert evaluation["route_modification_success"] is False


@pytest.mark.slow
def test_evaluate_batch(tmp_path):
    out = tmp_path / "batch"
    assert main(["evaluate", "--batch", "1", "--seed", "3", "--small-nodes", "20", "--large-nodes", "24",
                 "--max-steps", "300", "--out", str(out)]) == 0
    rows = _read_csv(out / "table1.csv")
    assert rows[0] == ["metric", "small", "large"]
    assert len(rows) == 5
    payload = json.loads((out / "evaluation.json").read_text())
    assert set(payload["scenarios"]) == {"small", "large"}


def test_bad_arguments_exit_2(tmp_path):
    assert main(["plan"]) == 2
    assert main(["no-such-command"]) == 2
    assert main(["gen-env", "--nodes", "many", "--out", str(tmp_path / "x")]) == 2


def test_gen_env_sharpen_writes_report(env_dir, tmp_path):
    out = tmp_path / "sharp"
    assert main(["gen-env", "--seed", "7", "--nodes", "40", "--landmarks", "4", "--sharpen",
                 "--max-steps", "200", "--out", str(out)]) == 0
    report = json.loads((out / "sharpen_report.json").read_text())
    assert len(report["modifications"]) == 4
    assert report["nodes"] == [r["node_id"] for r in report["modifications"]]
    for r in report["modifications"]:
        assert r["similarity_after"] > r["similarity_before"]
    assert (out / "manifest.json").read_bytes() != b""
    changed = [name for name in _list_files(str(env_dir)) if name.endswith(".vimg")
               and (env_dir / name).read_bytes() != (out / name).read_bytes()]
    assert 1 <= len(changed) <= 4
