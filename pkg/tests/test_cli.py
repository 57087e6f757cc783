import struct
import subprocess
import sys

import numpy as np
import pytest

from uwpose import io


def run_cli(*argv, cwd):
    return subprocess.run([sys.executable, "-m", "uwpose.cli", *map(str, argv)],
                          cwd=cwd, capture_output=True)


def kv(stdout: bytes) -> dict:
    table = {}
    for line in stdout.decode().splitlines():
        key, _, value = line.partition("=")
        table[key] = value
    return table


def write_image_fixtures(root, seed=5, shape=(20, 24)):
    rng = np.random.default_rng(seed)
    rgb = rng.uniform(0.05, 0.9, size=shape + (3,))
    depth = rng.uniform(0.5, 6.0, size=shape)
    (root / "rgb.pfm").write_bytes(io.write_pfm(rgb))
    (root / "depth.pfm").write_bytes(io.write_pfm(depth))


def test_synth_graph_structure_and_determinism(tmp_path):
    for sub in ("a", "b"):
        d = tmp_path / sub
        d.mkdir()
        proc = run_cli("synth-graph", "--seed", 7, "--loop-prob", "0.2",
                       "--out", "g.g2o", "--gt", "gt.tum", "--quiet", cwd=d)
        assert proc.returncode == 0
    assert (tmp_path / "a/g.g2o").read_bytes() == (tmp_path / "b/g.g2o").read_bytes()
    assert (tmp_path / "a/gt.tum").read_bytes() == (tmp_path / "b/gt.tum").read_bytes()
    doc = io.parse_g2o((tmp_path / "a/g.g2o").read_bytes())
    assert len(doc.vertices_se2) + len(doc.vertices_se3) == 25
    assert len(doc.edges_se2) + len(doc.edges_se3) >= 24


def test_noiseless_graph_optimizes_to_zero(tmp_path):
    proc = run_cli("synth-graph", "--odo-sigma", "0,0", "--loop-prob", "0",
                   "--seed", 1, "--out", "g.g2o", "--quiet", cwd=tmp_path)
    assert proc.returncode == 0
    proc = run_cli("optimize", "--in", "g.g2o", "--quiet", cwd=tmp_path)
    report = kv(proc.stdout)
    assert float(report["initial_chi2"]) <= 1e-12
    assert float(report["final_chi2"]) <= 1e-12


def test_optimize_rerun_byte_identical(tmp_path):
    run_cli("synth-graph", "--seed", 3, "--loop-prob", "0.3",
            "--out", "g.g2o", "--quiet", cwd=tmp_path)
    outs = []
    for sub in ("a", "b"):
        d = tmp_path / sub
        d.mkdir()
        proc = run_cli("optimize", "--in", "../g.g2o", "--out", "est.tum",
                       "--report", "rep.txt", "--quiet", cwd=d)
        assert proc.returncode == 0
        outs.append(proc.stdout)
    assert outs[0] == outs[1]
    for name in ("est.tum", "rep.txt", "rep.png"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_optimize_beats_dead_reckoning(tmp_path):
    run_cli("synth-graph", "--seed", 11, "--loop-prob", "0.4",
            "--out", "g.g2o", "--gt", "gt.tum", "--quiet", cwd=tmp_path)
    run_cli("optimize", "--in", "g.g2o", "--out", "est.tum", "--quiet", cwd=tmp_path)
    run_cli("convert", "--in", "g.g2o", "--out", "init.tum", "--quiet", cwd=tmp_path)
    ate_est = float(kv(run_cli("eval", "--est", "est.tum", "--gt", "gt.tum",
                               "--quiet", cwd=tmp_path).stdout)["ate_rmse"])
    ate_init = float(kv(run_cli("eval", "--est", "init.tum", "--gt", "gt.tum",
                                "--quiet", cwd=tmp_path).stdout)["ate_rmse"])
    assert ate_est < ate_init


def spatial_graph(tmp_path, seed=3):
    proc = run_cli("synth-graph", "--layout", "grid:4x4", "--seed", seed,
                   "--odo-sigma", "0.05,0.02", "--loop-prob", "0.4",
                   "--depth-profile", "sinusoid", "--out", "g3.g2o",
                   "--gt", "gt3.tum", "--quiet", cwd=tmp_path)
    assert proc.returncode == 0


def test_pipeline_budget_zero_matches_plain_lm(tmp_path):
    spatial_graph(tmp_path)
    pipe = kv(run_cli("pipeline", "--in", "g3.g2o", "--budget", 0,
                      "--quiet", cwd=tmp_path).stdout)
    opt = kv(run_cli("optimize", "--in", "g3.g2o", "--solver", "lm",
                     "--quiet", cwd=tmp_path).stdout)
    lm_chi2 = float(opt["final_chi2"])
    assert abs(float(pipe["final_chi2"]) - lm_chi2) <= 1e-9 * lm_chi2


def test_pipeline_report_lists_all_stage_boundaries(tmp_path):
    spatial_graph(tmp_path)
    proc = run_cli("pipeline", "--in", "g3.g2o", "--budget", 4,
                   "--report", "prep.txt", "--quiet", cwd=tmp_path)
    assert proc.returncode == 0
    report = kv((tmp_path / "prep.txt").read_bytes())
    for stage in ("stage1_lm3d", "stage2_project", "stage3_refine",
                  "stage4_lift", "stage5_lm3d"):
        assert f"{stage}.chi2" in report
        assert f"{stage}.oc_log" in report
    assert (tmp_path / "prep.png").exists()
    assert float(report["final_chi2"]) <= float(report["stage1_lm3d.chi2"]) * (1 + 1e-12)


def test_refine_subcommand(tmp_path):
    run_cli("synth-graph", "--seed", 7, "--loop-prob", "0.3",
            "--out", "g.g2o", "--quiet", cwd=tmp_path)
    proc = run_cli("refine", "--in", "g.g2o", "--budget", 12, "--out", "r.tum",
                   "--report", "rrep.txt", "--quiet", cwd=tmp_path)
    assert proc.returncode == 0
    report = kv(proc.stdout)
    assert float(report["final_oc"]) <= float(report["initial_oc"])
    assert report["rolled_back"] == "0"
    assert (tmp_path / "rrep.png").exists()
    # spatial input is a domain error, not a crash
    spatial_graph(tmp_path)
    proc = run_cli("refine", "--in", "g3.g2o", "--quiet", cwd=tmp_path)
    assert proc.returncode == 1


def test_eval_identity_is_all_zero(tmp_path):
    run_cli("synth-graph", "--seed", 2, "--out", "g.g2o", "--gt", "gt.tum",
            "--quiet", cwd=tmp_path)
    report = kv(run_cli("eval", "--est", "gt.tum", "--gt", "gt.tum",
                        "--quiet", cwd=tmp_path).stdout)
    for key in ("ate_rmse", "rpe_trans_m", "rpe_rot_deg", "deg_per_meter",
                "drift_percent"):
        assert float(report[key]) == 0.0


def test_eval_csv_and_report(tmp_path):
    run_cli("synth-graph", "--seed", 4, "--loop-prob", "0.2", "--out", "g.g2o",
            "--gt", "gt.tum", "--quiet", cwd=tmp_path)
    run_cli("optimize", "--in", "g.g2o", "--out", "est.tum", "--quiet", cwd=tmp_path)
    proc = run_cli("eval", "--est", "est.tum", "--gt", "gt.tum", "--align", "sim3",
                   "--csv", "err.csv", "--report", "erep.txt", "--quiet", cwd=tmp_path)
    assert proc.returncode == 0
    lines = (tmp_path / "err.csv").read_text().strip().splitlines()
    assert lines[0] == "index,ate_m,rpe_trans_m,rpe_rot_deg"
    assert len(lines) == 26
    report = kv(proc.stdout)
    assert "alignment_scale" in report
    assert (tmp_path / "erep.png").exists()


def test_uw_round_trip_through_files(tmp_path):
    write_image_fixtures(tmp_path)
    proc = run_cli("uw-synth", "--rgb", "rgb.pfm", "--depth", "depth.pfm",
                   "--water", "turbid", "--seed", 11, "--out", "uw.pfm",
                   "--params", "params.txt", "--quiet", cwd=tmp_path)
    assert proc.returncode == 0
    proc = run_cli("uw-invert", "--uw", "uw.pfm", "--depth", "depth.pfm",
                   "--params", "params.txt", "--out", "jhat.pfm",
                   "--mask", "gamma.pfm", "--quiet", cwd=tmp_path)
    assert proc.returncode == 0
    rgb, _ = io.read_pfm((tmp_path / "rgb.pfm").read_bytes())
    jhat, _ = io.read_pfm((tmp_path / "jhat.pfm").read_bytes())
    depth, _ = io.read_pfm((tmp_path / "depth.pfm").read_bytes())
    beta = np.array([float(line.split("=")[1])
                     for line in (tmp_path / "params.txt").read_text().splitlines()
                     if line.startswith("beta_")])
    recoverable = depth[..., None] * beta <= 8.0
    assert np.abs(jhat - rgb)[recoverable].max() <= 1e-6


def test_uw_turbid_attenuates_red_more_than_clear(tmp_path):
    write_image_fixtures(tmp_path)
    means = {}
    for water in ("clear", "turbid"):
        run_cli("uw-synth", "--rgb", "rgb.pfm", "--depth", "depth.pfm",
                "--water", water, "--seed", 11, "--out", f"{water}.pfm",
                "--params", f"{water}.txt", "--quiet", cwd=tmp_path)
        img, _ = io.read_pfm((tmp_path / f"{water}.pfm").read_bytes())
        means[water] = float(img[..., 0].mean())
    assert means["turbid"] < means["clear"]


def test_uw_mask_near_one_without_attenuation(tmp_path):
    write_image_fixtures(tmp_path)
    # beta = 0 makes synthesis a pass-through, so the mask must sit at 1
    params = ["mode=eq6", "water=clear", "seed=0"]
    params += [f"beta_{c}=0" for c in "rgb"]
    params += [f"b_inf_{c}=0.2" for c in "rgb"]
    params += [f"w_{c}=1" for c in "rgb"]
    (tmp_path / "p0.txt").write_text("\n".join(params) + "\n")
    proc = run_cli("uw-invert", "--uw", "rgb.pfm", "--depth", "depth.pfm",
                   "--params", "p0.txt", "--out", "jhat.pfm",
                   "--mask", "gamma.pfm", "--quiet", cwd=tmp_path)
    assert proc.returncode == 0
    gamma, _ = io.read_pfm((tmp_path / "gamma.pfm").read_bytes())
    assert gamma.min() >= 1 - 1e-3


def test_threads_do_not_change_output(tmp_path):
    write_image_fixtures(tmp_path)
    blobs = {}
    for threads in (1, 3):
        d = tmp_path / f"t{threads}"
        d.mkdir()
        proc = run_cli("uw-synth", "--rgb", "../rgb.pfm", "--depth", "../depth.pfm",
                       "--seed", 9, "--threads", threads, "--out", "uw.pfm",
                       "--params", "p.txt", "--quiet", cwd=d)
        assert proc.returncode == 0
        blobs[threads] = ((d / "uw.pfm").read_bytes(), (d / "p.txt").read_bytes(),
                          proc.stdout)
    assert blobs[1] == blobs[3]


def test_train_policy_deterministic_and_tagged(tmp_path):
    blobs = []
    for name in ("a.mrvp", "b.mrvp"):
        proc = run_cli("train-policy", "--method", "reinforce", "--iters", 3,
                       "--seed", 2, "--out", name, "--quiet", cwd=tmp_path)
        assert proc.returncode == 0
        blobs.append((tmp_path / name).read_bytes())
    assert blobs[0] == blobs[1]
    magic, version, method_tag, count = struct.unpack("<4sIIQ", blobs[0][:20])
    assert magic == b"MRVP"
    assert method_tag == 2


def test_convert_is_canonicalizing_and_idempotent(tmp_path):
    run_cli("synth-graph", "--seed", 5, "--loop-prob", "0.2", "--out", "g.g2o",
            "--gt", "gt.tum", "--quiet", cwd=tmp_path)
    run_cli("convert", "--in", "g.g2o", "--out", "c1.g2o", "--quiet", cwd=tmp_path)
    run_cli("convert", "--in", "c1.g2o", "--out", "c2.g2o", "--quiet", cwd=tmp_path)
    assert (tmp_path / "c1.g2o").read_bytes() == (tmp_path / "c2.g2o").read_bytes()
    run_cli("convert", "--in", "gt.tum", "--out", "t1.tum", "--quiet", cwd=tmp_path)
    run_cli("convert", "--in", "t1.tum", "--out", "t2.tum", "--quiet", cwd=tmp_path)
    assert (tmp_path / "t1.tum").read_bytes() == (tmp_path / "t2.tum").read_bytes()
    proc = run_cli("convert", "--in", "g.g2o", "--out", "traj.tum", "--quiet",
                   cwd=tmp_path)
    assert proc.returncode == 0
    assert len(io.parse_tum((tmp_path / "traj.tum").read_bytes())) == 25


def test_exit_codes(tmp_path):
    # usage errors
    assert run_cli("optimize", "--in", "x.g2o", "--bogus", cwd=tmp_path).returncode == 2
    assert run_cli("no-such-command", cwd=tmp_path).returncode == 2
    assert run_cli(cwd=tmp_path).returncode == 2
    # domain errors
    assert run_cli("optimize", "--in", "missing.g2o", "--quiet",
                   cwd=tmp_path).returncode == 1
    run_cli("synth-graph", "--seed", 1, "--out", "g.g2o", "--gt", "gt.tum",
            "--quiet", cwd=tmp_path)
    assert run_cli("convert", "--in", "gt.tum", "--out", "x.g2o", "--quiet",
                   cwd=tmp_path).returncode == 1
    assert run_cli("synth-graph", "--layout", "grid:9x9", "--n", "200",
                   "--out", "g.g2o", "--quiet", cwd=tmp_path).returncode == 1


def test_quiet_silences_progress_only(tmp_path):
    loud = run_cli("synth-graph", "--seed", 1, "--out", "g.g2o", cwd=tmp_path)
    quiet = run_cli("synth-graph", "--seed", 1, "--out", "g.g2o", "--quiet",
                    cwd=tmp_path)
    assert loud.returncode == quiet.returncode == 0
    assert loud.stderr != b""
    assert quiet.stderr == b""
    assert loud.stdout == quiet.stdout
