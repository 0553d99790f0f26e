import json
import math

import numpy as np
import pytest

from neumann_spectra import cli
from neumann_spectra.cli import (
    EXIT_INCONCLUSIVE,
    EXIT_PASS,
    EXIT_USAGE,
    cached_spectrum,
    default_M,
    main,
)
from neumann_spectra.config import ConfigError, DomainSpec, ExperimentConfig, load_config, load_domain
from neumann_spectra.discrete_operator import assemble
from neumann_spectra.geometry import CuspDomain, rasterize, unit_interval, unit_square


def write(path, text):
    path.write_text(text)
    return path


class TestConfig:
    def test_defaults_roundtrip(self):
        cfg = ExperimentConfig()
        again = ExperimentConfig.from_dict(cfg.to_dict())
        assert again == cfg
        assert again.digest() == cfg.digest()

    def test_unknown_top_key(self):
        with pytest.raises(ConfigError, match="sedd"):
            ExperimentConfig.from_dict({"sedd": 1})

    def test_unknown_section_key(self):
        with pytest.raises(ConfigError, match="mm"):
            ExperimentConfig.from_dict({"spectrum": {"mm": 4}})

    def test_unknown_domain_key(self):
        with pytest.raises(ConfigError, match="radius"):
            ExperimentConfig.from_dict({"domain": {"kind": "square", "radius": 2}})

    def test_version(self):
        with pytest.raises(ConfigError, match="version"):
            ExperimentConfig.from_dict({"version": 99})

    @pytest.mark.parametrize(
        "data",
        [
            {"spectrum": {"m": 0}},
            {"spectrum": {"m": 2.5}},
            {"domain": {"kind": "square", "h": 0.0}},
            {"domain": {"kind": "blob"}},
            {"seed": -1},
            {"perturb": {"eps": [0.6]}},
            {"perturb": {"family": "twist"}},
        ],
    )
    def test_ranges(self, data):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict(data)

    def test_load_config_file(self, tmp_path):
        p = write(tmp_path / "c.toml", 'seed = 3\n[domain]\nkind = "cusp"\ngamma = 0.5\n[spectrum]\nm = 6\n')
        cfg = load_config(p)
        assert cfg.seed == 3 and cfg.spectrum.m == 6
        assert isinstance(cfg.domain.build(), CuspDomain)

    def test_bad_toml(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(write(tmp_path / "c.toml", "[domain\n"))
        with pytest.raises(ConfigError, match="does not exist"):
            load_config(tmp_path / "missing.toml")

    def test_load_domain(self, tmp_path):
        assert load_domain("disc") == DomainSpec("disc")
        p = write(tmp_path / "d.toml", '[domain]\nkind = "box"\nlo = [0, 0]\nhi = [2, 1]\n')
        assert load_domain(str(p)).build().measure() == pytest.approx(2.0)
        with pytest.raises(ConfigError):
            load_domain("squre")

    def test_default_M(self):
        assert default_M(CuspDomain(2, 0.5)) == pytest.approx(3.0)
        assert default_M(unit_interval()) == 1.0
        assert default_M(unit_square()) == pytest.approx(2.2)


def run_json(tmp_path, name, argv, fname):
    out = tmp_path / name
    code = main([*argv, "--out", str(out)])
    return code, json.loads((out / fname).read_text()), out


class TestCommands:
    def test_interval_spectrum(self, tmp_path):
        code, rep, _ = run_json(tmp_path, "i", ["spectrum", "--domain", "interval", "--m", "6"], "spectrum.json")
        assert code == EXIT_PASS
        lam = np.array([r["lambda"] for r in rep["rows"]])
        n = np.arange(6)
        assert np.allclose(lam[1:], (n[1:] * math.pi) ** 2, rtol=0.01)

    def test_square_spectrum_config(self, tmp_path):
        cfg = write(tmp_path / "sq.toml", '[domain]\nkind = "square"\n[spectrum]\nm = 10\n')
        code, rep, out = run_json(tmp_path, "s", ["spectrum", "--config", str(cfg)], "spectrum.json")
        assert code == EXIT_PASS
        assert rep["rows"][1]["lambda"] == pytest.approx(math.pi**2, rel=0.01)
        assert (out / "raster.pgm").read_bytes().startswith(b"P5")

    def test_rerun_identical(self, tmp_path):
        argv = ["spectrum", "--domain", "disc", "--h", "0.05", "--m", "5"]
        main([*argv, "--out", str(tmp_path / "a")])
        main([*argv, "--out", str(tmp_path / "b")])
        for f in ("spectrum.json", "eigenvalues.csv", "eigenvectors.bin", "raster.pgm", "mode1.pgm"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
        ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
        mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
        assert ma["files"] == mb["files"] or all(
            x == y for x, y in zip(ma["files"], mb["files"]) if x["file"] != "config.json"
        )
        assert ma["config_hash"] == mb["config_hash"]

    def test_usage_errors(self, tmp_path, capsys):
        assert main(["spectrum", "--domain", "nowhere.toml", "--out", str(tmp_path)]) == EXIT_USAGE
        assert "does not exist" in capsys.readouterr().err
        assert main(["spectrum", "--m", "-2", "--out", str(tmp_path)]) == EXIT_USAGE
        assert main(["frobnicate"]) == EXIT_USAGE
        bad = write(tmp_path / "b.toml", "[spectrum]\nmm = 3\n")
        assert main(["spectrum", "--config", str(bad), "--out", str(tmp_path)]) == EXIT_USAGE

    def test_dimension_square(self, tmp_path):
        code, rep, out = run_json(tmp_path, "d", ["dimension", "--domain", "square"], "dimension.json")
        assert code == EXIT_PASS
        assert rep["estimate"] == pytest.approx(1.0, abs=0.1)
        assert (out / "collar.gp").exists()

    def test_perturb_rectangle(self, tmp_path):
        code, rep, out = run_json(
            tmp_path, "p",
            ["perturb", "--domain", "square", "--family", "graph_shrink",
             "--eps", "0.02", "0.04", "0.08", "--n-max", "4", "--sweep-h", "0.01"],
            "stability.json",
        )
        assert code == EXIT_PASS
        assert (out / "verdicts.csv").read_text().count("pass") >= 4 * 3

    def test_whitney_and_heat(self, tmp_path):
        code, rep, _ = run_json(tmp_path, "w", ["whitney", "--domain", "disc", "--k-max", "7"], "whitney.json")
        assert code == EXIT_PASS
        code, rep, _ = run_json(tmp_path, "h", ["heatkernel", "--domain", "interval"], "heatkernel.json")
        assert code == EXIT_PASS

    def test_every_row_has_reference(self, tmp_path):
        main(["verify-all", "--domain", "interval", "--out", str(tmp_path / "v")])
        for f in (tmp_path / "v").glob("*.json"):
            if f.name in ("config.json", "manifest.json"):
                continue

            def walk(node):
                if isinstance(node, dict):
                    if "rows" in node:
                        for r in node["rows"]:
                            assert "reference" in r, f.name
                    for v in node.values():
                        walk(v)
                elif isinstance(node, list):
                    for v in node:
                        walk(v)

            walk(json.loads(f.read_text()))
        summary = json.loads((tmp_path / "v" / "summary.json").read_text())
        assert all(r["reference"] for r in summary["checks"])

    def test_verify_all_exit_matches_verdicts(self, tmp_path):
        code = main(["verify-all", "--domain", "interval", "--out", str(tmp_path / "v")])
        verdicts = [r["verdict"] for r in json.loads((tmp_path / "v" / "summary.json").read_text())["checks"]]
        assert "fail" not in verdicts
        assert code == (EXIT_INCONCLUSIVE if "inconclusive" in verdicts else EXIT_PASS)


class TestCache:
    def test_hit_matches_miss(self, tmp_path, monkeypatch):
        monkeypatch.setenv(cli.CACHE_ENV, str(tmp_path / "cache"))
        op = assemble(rasterize(unit_square(), 1 / 16))
        a = cached_spectrum(op, 5, 1e-10, 0)
        assert len(list((tmp_path / "cache").glob("*.npz"))) == 1
        b = cached_spectrum(op, 5, 1e-10, 0)
        assert b.meta["cache"] == "hit"
        assert np.array_equal(a.eigenvalues, b.eigenvalues)
        assert np.array_equal(a.eigenvectors, b.eigenvectors)
        cached_spectrum(op, 6, 1e-10, 0)
        assert len(list((tmp_path / "cache").glob("*.npz"))) == 2

    def test_disabled(self, monkeypatch):
        monkeypatch.delenv(cli.CACHE_ENV, raising=False)
        op = assemble(rasterize(unit_interval(), 1 / 50))
        assert "cache" not in cached_spectrum(op, 3, 1e-10, 0).meta
