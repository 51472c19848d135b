import io as stdio
import json
import subprocess
import sys

import numpy as np
import pytest

from psvb import io
from psvb.cli import main
from psvb.lipschitz import random_cnn
from psvb.multifilter import MultiFilter
from psvb.signal import Grid, MultiSignal


def run(*argv):
    buf = stdio.StringIO()
    code = main([str(a) for a in argv], out=buf)
    lines = buf.getvalue().splitlines()
    values = dict(line.split("=", 1) for line in lines if "=" in line and " " not in line)
    return code, values, lines


def write_chain(path, modules, dims=2, seed=0):
    path.write_text(json.dumps({"dims": dims, "seed": seed, "modules": modules}))
    return path


def test_verify_identity_chain(tmp_path):
    p = write_chain(tmp_path / "c.json", [{"kind": "identity", "channels": 3}])
    code, v, _ = run("verify", p, "--grid", "8x8")
    assert code == 0 and v["passed"] == "1"
    assert float(v["paraunitarity_defect"]) <= 1e-15


def test_verify_scaled_module_fails(tmp_path):
    p = write_chain(tmp_path / "c.json", [{"kind": "householder", "channels": 3, "k1": [1, 0], "scale": 1.1}])
    code, v, _ = run("verify", p)
    assert code == 1 and v["passed"] == "0"


def test_verify_long_chain_and_gram(tmp_path):
    p = write_chain(tmp_path / "c.json", [{"kind": "bcop", "channels": 8, "length": 16}], seed=5)
    code, v, _ = run("verify", p, "--grid", "16x16", "--gram", "--out", tmp_path / "h.psvb")
    assert code == 0 and v["modules"] == "16"
    assert float(v["gram_idempotence_defect"]) <= 1e-10
    H = io.load(tmp_path / "h.psvb", "filter")
    assert H.grid_hint == Grid((16, 16))


def test_verify_bad_input(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text("{")
    assert run("verify", p)[0] == 2
    assert run("verify", tmp_path / "missing.json")[0] == 2
    assert "error:" in capsys.readouterr().err


def test_norm(tmp_path):
    io.save(tmp_path / "id.psvb", MultiFilter.identity(2, 2))
    io.save(tmp_path / "two.psvb", MultiFilter.identity(1, 2).scaled(2.0))
    assert float(run("norm", tmp_path / "id.psvb")[1]["operator_norm"]) == 1.0
    assert float(run("norm", tmp_path / "two.psvb")[1]["operator_norm"]) == 2.0
    chain = write_chain(tmp_path / "c.json", [{"kind": "bcop", "channels": 4, "length": 6}])
    code, v, _ = run("norm", chain, "--grid", "12x12", "--oversample", "4")
    assert code == 0 and abs(float(v["operator_norm"]) - 1) <= 1e-10
    assert abs(float(v["oversampled_norm"]) - 1) <= 1e-10
    assert float(v["frequency_spacing"].split(",")[0]) == pytest.approx(2 * np.pi / 48)


def test_norm_corrupt_file(tmp_path):
    p = tmp_path / "f.psvb"
    io.save(p, MultiFilter.identity(2))
    p.write_bytes(p.read_bytes()[:-3])
    assert run("norm", p)[0] == 2


def test_compose(tmp_path):
    io.save(tmp_path / "a.psvb", MultiFilter([[1]], [[[1.0], [0.0]]]))
    io.save(tmp_path / "b.psvb", MultiFilter([[2]], [[[2.0, 1.0]]]))
    code, v, _ = run("compose", tmp_path / "a.psvb", tmp_path / "b.psvb", "--out", tmp_path / "ab.psvb")
    assert code == 0 and (v["in_channels"], v["out_channels"]) == ("1", "1")
    H = io.load(tmp_path / "ab.psvb")
    assert H.num_taps == 1 and H.taps[0][0] == (3,) and H.matrices[0, 0, 0] == 2.0
    assert run("compose", tmp_path / "a.psvb", tmp_path / "a.psvb", "--out", tmp_path / "x.psvb")[0] == 2


def test_denoise_identity_and_determinism(tmp_path):
    img = MultiSignal.from_array(np.random.default_rng(0).uniform(0, 1, (1, 16, 16)))
    io.save(tmp_path / "in.psvb", img)
    code, v, _ = run("denoise", tmp_path / "in.psvb", tmp_path / "out.psvb", "--sigma", 0, "--tau", 0)
    assert code == 0 and v["psnr_denoised"] == "999"
    for k in (1, 2):
        run("denoise", tmp_path / "in.psvb", tmp_path / f"o{k}.psvb", "--seed", 3)
    assert (tmp_path / "o1.psvb").read_bytes() == (tmp_path / "o2.psvb").read_bytes()


def test_denoise_improves_phantom(tmp_path):
    run("reconstruct", "--image", "phantom:64", "--mask", "full", "--sigma", 0, "--max-iters", 1,
        "--zero-fill-out", tmp_path / "p.psvb")
    best = -np.inf
    for tau in (0.02, 0.04, 0.06):
        code, v, _ = run("denoise", tmp_path / "p.psvb", tmp_path / "d.psvb", "--tau", tau)
        assert code == 0
        best = max(best, float(v["psnr_denoised"]) - float(v["psnr_noisy"]))
    assert best > 0


def test_denoise_with_weights(tmp_path):
    io.save(tmp_path / "net.psvb", random_cnn(3, 3, seed=1))
    io.save(tmp_path / "in.psvb", MultiSignal.from_array(np.ones((1, 8, 8)) * 0.5))
    code, _, lines = run("denoise", tmp_path / "in.psvb", tmp_path / "o.psvb",
                         "--denoiser", tmp_path / "net.psvb", "--beta", 0.5)
    assert code == 0 and any(line.startswith("audit: lipschitz_bound=") for line in lines)
    bad = random_cnn(3, 2, seed=2)
    from psvb.lipschitz import CnnDenoiser
    io.save(tmp_path / "bad.psvb", CnnDenoiser((bad.filters[0].scaled(3.0), bad.filters[1]), bad.activations))
    args = ("denoise", tmp_path / "in.psvb", tmp_path / "o.psvb", "--denoiser", tmp_path / "bad.psvb")
    assert run(*args)[0] == 2
    code, _, lines = run(*args, "--renormalize")
    assert code == 0 and any("renormalized filter_0" in line for line in lines)


def test_reconstruct_full_mask(tmp_path):
    code, v, _ = run("reconstruct", "--image", "phantom:32", "--mask", "full", "--sigma", 0,
                     "--denoiser", "identity", "--trace-out", tmp_path / "t.csv")
    assert code == 0 and float(v["psnr_pnp"]) >= 100
    rows = (tmp_path / "t.csv").read_text().splitlines()
    assert rows[0] == "iteration,gap" and len(rows) == int(v["iterations"]) + 1


def test_reconstruct_cartesian_beats_zero_fill(tmp_path):
    code, v, _ = run("reconstruct", "--image", "phantom:32", "--mask", "cartesian:4", "--beta", 0.9,
                     "--out", tmp_path / "r.pgm")
    assert code == 0 and float(v["psnr_pnp"]) > float(v["psnr_zero_fill"])
    assert io.read_image(tmp_path / "r.pgm").grid == Grid((32, 32))


def test_reconstruct_divergence_exit(monkeypatch, capsys):
    from psvb import cli
    from psvb.inverse import SolverDivergence

    def explode(*args, **kwargs):
        raise SolverDivergence("iterate norm exceeded")

    monkeypatch.setattr(cli, "fbs_solve", explode)
    assert run("reconstruct", "--image", "phantom:16", "--max-iters", 5)[0] == 3
    assert "iterate norm exceeded" in capsys.readouterr().err


def test_reconstruct_step_size_out_of_range():
    assert run("reconstruct", "--image", "phantom:16", "--alpha", 3.0)[0] == 2
    assert run("reconstruct", "--image", "phantom:16", "--denoiser", "haar:x")[0] == 2


def test_stability_commands():
    code, v, lines = run("stability", "--model", "identity", "--grid", "16x16", "--trials", 3, "--L0", 0.9)
    assert code == 0 and v["passed"] == "1"
    assert sum(line.startswith("trial=") for line in lines) == 3
    code, v, _ = run("stability", "--grid", "16x16", "--trials", 2, "--perturbation", 0)
    assert code == 0 and v["model"] == "mri"
    assert run("stability", "--beta", 0.7)[0] == 2


def test_mask_command(tmp_path):
    code, v, _ = run("mask", "radial:8", "--grid", "32x32", "--out", tmp_path / "m.psvb")
    assert code == 0 and int(v["sampled"]) > 0
    assert io.file_kind(tmp_path / "m.psvb") == "mask"
    code, v, _ = run("reconstruct", "--image", "phantom:32", "--mask", tmp_path / "m.psvb", "--max-iters", 3)
    assert code == 0
    assert run("mask", "random:2.0")[0] == 2
    assert run("mask", "zigzag")[0] == 2


def test_convert(tmp_path):
    x = MultiSignal.random(Grid((4, 5)), 2, rng=0)
    io.save(tmp_path / "x.psvb", x)
    assert run("convert", tmp_path / "x.psvb", tmp_path / "x.csv")[0] == 0
    assert run("convert", tmp_path / "x.csv", tmp_path / "y.psvb")[0] == 0
    assert (tmp_path / "x.psvb").read_bytes() == (tmp_path / "y.psvb").read_bytes()
    io.save(tmp_path / "f.psvb", MultiFilter.identity(2))
    assert run("convert", tmp_path / "f.psvb", tmp_path / "g.psvb")[0] == 0
    assert run("convert", tmp_path / "f.psvb", tmp_path / "g.csv")[0] == 2


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "psvb.cli", "mask", "full", "--grid", "4x4"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0 and "sampled=16" in proc.stdout
