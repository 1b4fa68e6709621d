import os
import subprocess
import sys

import numpy as np
import pytest

from domainuq.cli import main
from domainuq.config import ExperimentConfig, config_hash, parse_config
from domainuq.errors import ConfigError
from domainuq.fem import load_field
from domainuq.fields import load_scalar_field, load_vector_field


class TestConfigParsing:
    def test_defaults(self):
        cfg = parse_config("")
        assert cfg == ExperimentConfig()

    def test_full_file(self):
        cfg = parse_config(
            "# comment\n"
            "mesh_level = 4\n"
            "eps_list = 0.125, 0.25, 0.5\n"
            "n_mc = 100  # trailing comment\n"
            "seed = 17\n")
        assert cfg.mesh_level == 4
        assert cfg.eps_list == (0.125, 0.25, 0.5)
        assert cfg.n_mc == 100
        assert cfg.seed == 17

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            parse_config("mesh_width = 3\n")

    def test_duplicate_key(self):
        with pytest.raises(ConfigError):
            parse_config("seed = 1\nseed = 2\n")

    @pytest.mark.parametrize("line", [
        "eps_list = 1, 0.5",          # not ascending
        "eps_list = -1, 1",           # not positive
        "n_mc = 1",
        "kl_tol_v = 0",
        "kl_tol_v = 1.5",
        "grid_cells = 8",
        "norm_mean = h2",
        "quad_level = -1",
    ])
    def test_invalid_values(self, line):
        with pytest.raises(ConfigError):
            parse_config(line + "\n")

    def test_hash_ignores_comments_and_order(self):
        a = parse_config("seed = 1\nmesh_level = 2\n")
        b = parse_config("# hi\nmesh_level = 2\nseed = 1\n")
        assert config_hash(a) == config_hash(b)
        c = parse_config("seed = 2\nmesh_level = 2\n")
        assert config_hash(a) != config_hash(c)


def write_config(path, text):
    path.write_text(text)
    return str(path)


TINY = (
    "mesh_level = 2\n"
    "grid_cells = 32\n"
    "eps_list = 0.5, 1\n"
    "n_mc = 32\n"
    "n_taylor = 2\n"
    "seed = 9\n"
    "quad_level = 1\n"
)


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    """One build-kl + solve-one run on a small config, shared by tests."""
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.cfg"
    cfg.write_text(TINY)
    out = root / "out"
    assert main(["build-kl", "--config", str(cfg), "--out", str(out)]) == 0
    return str(cfg), str(out)


class TestBuildKL:
    def test_manifest_and_artifacts(self, tiny_run):
        _, out = tiny_run
        manifest = open(os.path.join(out, "kl_manifest.txt")).read()
        assert "vector_modes=" in manifest
        assert "rng=philox4x64" in manifest
        vf = load_vector_field(os.path.join(out, "vector_field.txt"))
        sf = load_scalar_field(os.path.join(out, "coefficient.txt"))
        assert vf.level == 2
        assert sf.grid.cells == 32

    def test_rerun_is_byte_identical(self, tiny_run, tmp_path):
        cfg, out = tiny_run
        out2 = tmp_path / "out2"
        assert main(["build-kl", "--config", cfg, "--out", str(out2)]) == 0
        for name in ("vector_field.txt", "coefficient.txt", "kl_manifest.txt"):
            a = open(os.path.join(out, name), "rb").read()
            b = open(out2 / name, "rb").read()
            assert a == b

    def test_default_desk_config_mode_brackets(self, tmp_path):
        out = tmp_path / "desk"
        assert main(["build-kl", "--out", str(out)]) == 0
        manifest = (out / "kl_manifest.txt").read_text()
        values = dict(line.split("=", 1) for line in manifest.splitlines()
                      if "=" in line and not line.startswith("#"))
        assert 40 <= int(values["vector_modes"]) <= 70
        assert 8 <= int(values["coeff_modes"]) <= 14

    def test_looser_tolerance_fewer_modes(self, tmp_path):
        cfg1 = write_config(tmp_path / "a.cfg", TINY)
        cfg2 = write_config(tmp_path / "b.cfg",
                            TINY + "kl_tol_v = 0.5\nkl_tol_a = 0.5\n")
        assert main(["build-kl", "--config", cfg1,
                     "--out", str(tmp_path / "o1")]) == 0
        assert main(["build-kl", "--config", cfg2,
                     "--out", str(tmp_path / "o2")]) == 0
        tight = load_vector_field(tmp_path / "o1" / "vector_field.txt")
        loose = load_vector_field(tmp_path / "o2" / "vector_field.txt")
        assert loose.n_modes < tight.n_modes


class TestSolveOne:
    def test_zero_sample_matches_smooth(self, tiny_run):
        cfg, out = tiny_run
        assert main(["solve-one", "--config", cfg, "--out", out,
                     "--y", "0", "--z", "0", "--eps", "0"]) == 0
        ue = open(os.path.join(out, "u_eps.txt"), "rb").read()
        u0 = open(os.path.join(out, "u0.txt"), "rb").read()
        assert ue == u0
        delta = load_field(os.path.join(out, "delta_u.txt"))
        assert np.array_equal(delta.values, np.zeros(delta.n))

    def test_outputs_reloadable(self, tiny_run):
        cfg, out = tiny_run
        assert main(["solve-one", "--config", cfg, "--out", out,
                     "--y", "0", "--z", "0", "--eps", "0.5"]) == 0
        from domainuq.fem import field_to_text
        text = open(os.path.join(out, "u_eps.txt")).read()
        assert field_to_text(load_field(os.path.join(out, "u_eps.txt"))) == text
        from domainuq.mesh import load_mesh
        dmesh = load_mesh(os.path.join(out, "deformed_mesh.txt"))
        assert dmesh.level == 2

    def test_wrong_dimension_is_config_error(self, tiny_run):
        cfg, out = tiny_run
        code = main(["solve-one", "--config", cfg, "--out", out,
                     "--y", "0.1,0.2", "--z", "0", "--eps", "0.5"])
        assert code == 2


class TestExitCodes:
    def test_missing_artifacts(self, tmp_path):
        cfg = write_config(tmp_path / "c.cfg", TINY)
        assert main(["convergence", "--config", cfg,
                     "--out", str(tmp_path / "empty")]) == 2

    def test_bad_config_file(self, tmp_path):
        cfg = write_config(tmp_path / "c.cfg", "nonsense = 1\n")
        assert main(["mc", "--config", cfg]) == 2

    def test_numerical_failure(self, tiny_run, tmp_path):
        cfg_text = TINY.replace("eps_list = 0.5, 1", "eps_list = 0.5, 50")
        cfg = write_config(tmp_path / "big.cfg", cfg_text)
        _, out = tiny_run
        assert main(["taylor", "--config", cfg, "--out", out]) == 3


class TestSyntheticMode:
    def test_convergence_slopes_exactly_two(self, tmp_path):
        cfg = write_config(tmp_path / "c.cfg", TINY)
        out = tmp_path / "syn"
        assert main(["convergence", "--config", cfg, "--out", str(out),
                     "--synthetic"]) == 0
        text = (out / "convergence.csv").read_text()
        slopes = [float(line.split()[-1]) for line in text.splitlines()
                  if line.startswith("# slope_")]
        assert len(slopes) == 2
        for s in slopes:
            assert abs(s - 2.0) <= 1e-6

    def test_taylor_slopes_exactly_two(self, tmp_path):
        cfg = write_config(tmp_path / "c.cfg", TINY)
        out = tmp_path / "syn"
        assert main(["taylor", "--config", cfg, "--out", str(out),
                     "--synthetic"]) == 0
        text = (out / "taylor.csv").read_text()
        for line in text.splitlines():
            if line.startswith("# slope sample="):
                assert abs(float(line.split()[-1]) - 2.0) <= 1e-6
        # the eps = 0 rows are exactly zero
        zero_rows = [l for l in text.splitlines() if ",0," in l]
        assert zero_rows
        assert all(l.rsplit(",", 1)[1] == "0" for l in zero_rows)


class TestSecondOrderVariance:
    def test_correction_reduces_variance_error(self, tiny_run, tmp_path):
        cfg, out = tiny_run
        plain = tmp_path / "plain"
        corrected = tmp_path / "corr"
        for target, extra in ((plain, []), (corrected,
                                            ["--second-order-variance"])):
            os.makedirs(target, exist_ok=True)
            for name in ("vector_field.txt", "coefficient.txt"):
                (target / name).write_bytes(
                    open(os.path.join(out, name), "rb").read())
            assert main(["convergence", "--config", cfg, "--out", str(target)]
                        + extra) == 0

        def var_errors(path):
            rows = [l for l in (path / "convergence.csv").read_text().splitlines()
                    if l and not l.startswith(("#", "eps,"))]
            return [float(r.split(",")[2]) for r in rows]

        e_plain = var_errors(plain)
        e_corr = var_errors(corrected)
        assert all(c < p for c, p in zip(e_corr, e_plain))


class TestConvergenceCSV:
    def test_eps_column_echoes_config(self, tiny_run):
        cfg, out = tiny_run
        assert main(["convergence", "--config", cfg, "--out", out]) == 0
        lines = open(os.path.join(out, "convergence.csv")).read().splitlines()
        data = [l for l in lines if l and not l.startswith("#")
                and not l.startswith("eps")]
        eps = [float(l.split(",")[0]) for l in data]
        assert eps == [0.5, 1.0]
        header = [l for l in lines if l.startswith("eps,")][0]
        assert header == "eps,err_mean_h1,err_var_w11,mc_stderr_mean,n_samples"
        assert any(l.startswith("# config_hash=") for l in lines)
        # gnuplot companions carry the same number of rows
        dat = open(os.path.join(out, "convergence_mean.dat")).read()
        assert len(dat.splitlines()) == len(eps)


def test_cli_entrypoint_runs():
    proc = subprocess.run(
        [sys.executable, "-m", "domainuq.cli", "--version"],
        capture_output=True, text=True)
    assert proc.returncode == 0
