import json

import numpy as np
import pytest

from photonqrng import cli
from photonqrng.extractor import BitBlock, ToeplitzSeed, symbols_to_bits, toeplitz_apply_naive
from photonqrng.files import (
    ConfigError,
    ManifestError,
    dump_config,
    load_config,
    manifest_path,
    read_bits,
    read_symbols,
    write_bits,
)
from photonqrng.model import reference_config
from photonqrng.simulator import simulate

REFERENCE_CFG = """\
# reference operating point
period_ns = 40.96
bin_count = 256
dead_time_ns = 45
dark_rate_cps = 15
mu = 1.52
"""


@pytest.fixture
def cfg(tmp_path):
    path = tmp_path / "reference.cfg"
    path.write_text(REFERENCE_CFG)
    return path


@pytest.fixture
def sym(tmp_path, cfg):
    out = tmp_path / "s.bin"
    assert cli.main(["simulate", str(cfg), "--seed", "5", "--symbols", "300000",
                     "--out", str(out)]) == 0
    return out


def strip_times(obj):
    if isinstance(obj, dict):
        return {k: strip_times(v) for k, v in obj.items() if k != "created"}
    if isinstance(obj, list):
        return [strip_times(v) for v in obj]
    return obj


class TestConfig:
    def test_reference_values(self, cfg):
        c = load_config(cfg)
        ref = reference_config()
        assert c.mu == pytest.approx(1.52, rel=1e-12)
        assert (c.period, c.num_bins, c.dead_time, c.dark_rate) == (ref.period, 256, ref.dead_time, 15.0)

    def test_lambda_form_and_section(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("[source]\nperiod_ns = 10\nbin_count = 16\nlambda_rate_cps = 1e8\nefficiency = 0.5\n")
        c = load_config(p)
        assert c.mu == pytest.approx(1e8 * 10e-9 * 0.5)

    def test_dump_roundtrip(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text(dump_config(reference_config(0.7)))
        got, ref = load_config(p).to_dict(), reference_config(0.7).to_dict()
        assert got == pytest.approx(ref, rel=1e-15)

    @pytest.mark.parametrize("text,match", [
        ("period_ns = 40\nbin_count = 256\n", "exactly one of"),
        ("period_ns = 40\nbin_count = 256\nmu = 1\nlambda_rate_cps = 5\n", "exactly one of"),
        ("bin_count = 256\nmu = 1\n", "period_ns"),
        ("period_ns = x\nbin_count = 256\nmu = 1\n", "not a number"),
        ("period_ns = 40\nbin_count = 256.5\nmu = 1\n", "integer"),
        ("period_ns = 40\nbin_count = 256\nmu = 1\ncolour = red\n", "unknown"),
        ("period_ns = 40\nbin_count = 256\nmu = -1\n", "invalid source"),
        ("period_ns = 40\nbin_count = 0\nmu = 1\n", "invalid source"),
    ])
    def test_malformed(self, tmp_path, text, match):
        p = tmp_path / "bad.cfg"
        p.write_text(text)
        with pytest.raises(ConfigError, match=match):
            load_config(p)


class TestFiles:
    def test_symbol_roundtrip(self, sym):
        stream = read_symbols(sym)
        again = simulate(load_config(sym.parent / "reference.cfg"), 5, 300000)
        assert np.array_equal(stream.symbols, again.symbols)
        assert stream.periods_elapsed == again.periods_elapsed
        assert stream.spad_counts == again.spad_counts
        assert stream.config == again.config
        assert sym.stat().st_size == 300000

    def test_bits_roundtrip_odd_length(self, tmp_path):
        b = BitBlock.from_bits(np.random.default_rng(0).integers(0, 2, 1003, dtype=np.uint8))
        write_bits(tmp_path / "b.bin", b)
        assert read_bits(tmp_path / "b.bin") == b

    def test_truncated_file_detected(self, sym):
        sym.write_bytes(sym.read_bytes()[:-1])
        with pytest.raises(ManifestError, match="length mismatch"):
            read_symbols(sym)

    def test_missing_manifest(self, sym):
        manifest_path(sym).unlink()
        with pytest.raises(ManifestError, match="missing manifest"):
            read_symbols(sym)

    def test_wide_alphabet_rejected(self, tmp_path):
        from photonqrng.files import write_symbols
        from photonqrng.model import SourceConfig
        s = simulate(SourceConfig.from_mu(1.0, 1e-8, 1024), 0, 100)
        with pytest.raises(ValueError, match="<= 256"):
            write_symbols(tmp_path / "w.bin", s)


class TestCommands:
    def test_analyze_reference_bound(self, sym, tmp_path):
        out = tmp_path / "a.json"
        assert cli.main(["analyze", str(sym), "--out", str(out)]) == 0
        r = json.loads(out.read_text())
        assert r["entropy"]["min_entropy_bound_per_bit"] == pytest.approx(0.88, abs=0.005)
        h = r["histogram"]
        assert len(h["counts"]) == 256 and sum(h["counts"]) == 300000
        assert sum(h["probabilities"]) == pytest.approx(1.0)
        assert h["model_probabilities"][0] == pytest.approx(r["entropy"]["exact_p1"])

    def test_extract_matches_library(self, sym, tmp_path):
        out = tmp_path / "x.bin"
        assert cli.main(["extract", str(sym), "--out", str(out), "--block-n", "65536",
                         "--toeplitz-seed", "9"]) == 0
        manifest = json.loads(manifest_path(out).read_text())
        geo = manifest["extraction"]
        assert geo["seed_generator_seed"] == 9 and geo["n"] == 65536
        raw = symbols_to_bits(read_symbols(sym))
        seed = ToeplitzSeed.random(geo["n"], geo["m"], 9)
        first = toeplitz_apply_naive(seed, raw.slice_bits(0, 65536)).bits()
        bits = read_bits(out)
        assert len(bits) == manifest["counts"]["extracted_bits"] == (2_400_000 // 65536) * geo["m"]
        assert np.array_equal(bits.slice_bits(0, geo["m"]), first)

    def test_reference_geometry(self, sym, capsys):
        assert cli.main(["extract", str(sym), "--paper-geometry", "--plan-only"]) == 0
        assert "n = 33600000, m = 29500000" in capsys.readouterr().out

    def test_test_command(self, sym, tmp_path, capsys):
        x = tmp_path / "x.bin"
        cli.main(["extract", str(sym), "--out", str(x), "--block-n", "65536"])
        rep = tmp_path / "t.json"
        assert cli.main(["test", str(x), "--sequences", "4", "--seq-bits", "100000",
                         "--out", str(rep)]) == 0
        r = json.loads(rep.read_text())
        assert r["sequences"] == 4 and len(r["summary"]) == 8
        assert "Proportion" in capsys.readouterr().out

    def test_bench(self, capsys):
        assert cli.main(["bench", "--block-n", "4096", "8192", "--sim-symbols", "10000"]) == 0
        out = capsys.readouterr().out
        assert "speedup" in out and "symbols/s" in out

    def test_pipeline_deterministic(self, cfg, tmp_path):
        args = ["pipeline", str(cfg), "--seed", "2", "--symbols", "400000", "--block-n", "65536",
                "--seq-bits", "100000"]
        assert cli.main(args + ["--outdir", str(tmp_path / "a")]) == 0
        assert cli.main(args + ["--outdir", str(tmp_path / "b")]) == 0
        names = sorted(p.name for p in (tmp_path / "a").iterdir())
        assert names == sorted(p.name for p in (tmp_path / "b").iterdir())
        for name in names:
            a, b = (tmp_path / d / name for d in "ab")
            if name.endswith(".json"):
                assert strip_times(json.loads(a.read_text())) == strip_times(json.loads(b.read_text()))
            else:
                assert a.read_bytes() == b.read_bytes()
        m = json.loads((tmp_path / "a" / "manifest.json").read_text())
        for entry in m["files"].values():
            assert (tmp_path / "a" / entry["path"]).stat().st_size == entry["bytes"]
        # outputs are readable by the consuming commands
        assert cli.main(["analyze", str(tmp_path / "a" / "symbols.bin")]) == 0
        assert len(read_bits(tmp_path / "a" / "extracted.bin")) == m["bits"]

    def test_rate_report_from_manifest(self):
        manifest = {"source": {"spad_count_rate": 13.9e6, "config": {"num_bins": 256}},
                    "extraction": {"n": 33_600_000, "m": 29_500_000}}
        r = cli.rate_report_from_manifest(manifest, observed_raw_bit_rate=109e6)
        assert r.nominal_raw_bit_rate == 111.2e6
        assert r.final_bit_rate == pytest.approx(95.7e6, rel=1e-3)


class TestExitCodes:
    def test_usage(self, capsys):
        assert cli.main([]) == 1
        assert cli.main(["simulate", "x.cfg"]) == 1
        assert cli.main(["extract", "s.bin", "--epsilon", "7"]) == 1
        assert "usage error" in capsys.readouterr().err

    def test_extract_needs_out(self, sym):
        assert cli.main(["extract", str(sym)]) == 1

    def test_config_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text("period_ns = 40\n")
        assert cli.main(["simulate", str(bad), "--seed", "1", "--symbols", "10",
                         "--out", str(tmp_path / "o")]) == 2
        assert "config error" in capsys.readouterr().err

    def test_missing_file(self, tmp_path, capsys):
        assert cli.main(["analyze", str(tmp_path / "nope.bin")]) == 2
        assert "missing manifest" in capsys.readouterr().err

    def test_length_mismatch(self, sym, capsys):
        with open(sym, "ab") as fh:
            fh.write(b"\x00")
        assert cli.main(["analyze", str(sym)]) == 2
        assert "length mismatch" in capsys.readouterr().err

    def test_m_nonpositive(self, sym, tmp_path, capsys):
        assert cli.main(["extract", str(sym), "--out", str(tmp_path / "x"), "--block-n", "128"]) == 2
        assert "increase the block length" in capsys.readouterr().err

    def test_too_few_raw_bits(self, sym, tmp_path, capsys):
        assert cli.main(["extract", str(sym), "--out", str(tmp_path / "x"),
                         "--block-n", "4000000"]) == 2
        assert "fewer than one block" in capsys.readouterr().err

    def test_sequence_length(self, sym, tmp_path, capsys):
        x = tmp_path / "x.bin"
        cli.main(["extract", str(sym), "--out", str(x), "--block-n", "65536"])
        assert cli.main(["test", str(x), "--sequences", "100", "--seq-bits", "1000000"]) == 2
        assert cli.main(["test", str(x), "--sequences", "4", "--seq-bits", "500"]) == 2
        err = capsys.readouterr().err
        assert err.count("sequence length error") == 2

    def test_precision_exhaustion(self, sym, tmp_path, monkeypatch, capsys):
        import photonqrng.extractor as ex
        real = ex.ToeplitzHasher.__init__

        def tight(self, seed, rounding_tolerance=0.25, fallback=True):
            real(self, seed, 0.0, fallback)

        monkeypatch.setattr(ex.ToeplitzHasher, "__init__", tight)
        assert cli.main(["extract", str(sym), "--out", str(tmp_path / "x"), "--block-n", "65536",
                         "--strict-precision"]) == 3
        assert "precision error" in capsys.readouterr().err
