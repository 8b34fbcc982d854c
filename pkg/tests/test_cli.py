import csv

import numpy as np
import pytest

from fastsep.cli import main, read_wav, write_wav
from fastsep.synth import make_scenario

SR = 16000


@pytest.fixture(scope="module")
def mixture_wav(tmp_path_factory):
    out = tmp_path_factory.mktemp("audio") / "mix.wav"
    mix, _ = make_scenario(n_sources=2, n_channels=3, duration=1.0, seed=0)
    write_wav(out, SR, 0.4 * mix / np.abs(mix).max())
    return out


class TestWavIo:
    def test_float_round_trip(self, tmp_path, rng):
        data = rng.uniform(-0.9, 0.9, (500, 3))
        path = tmp_path / "x.wav"
        write_wav(path, SR, data)
        rate, back = read_wav(path)
        assert rate == SR
        np.testing.assert_allclose(back, data, atol=1e-7)

    def test_missing_file(self, tmp_path):
        with pytest.raises(OSError):
            read_wav(tmp_path / "nope.wav")


class TestSeparateCommand:
    def test_writes_outputs_and_manifest(self, mixture_wav, tmp_path):
        out = tmp_path / "sep"
        code = main([
            "separate", str(mixture_wav), "--method", "fast-mnmf", "--sources", "2",
            "--bases", "4", "--iters", "3", "--seed", "5", "--out", str(out),
        ])
        assert code == 0
        assert (out / "source_1.wav").exists() and (out / "source_2.wav").exists()
        rate, est = read_wav(out / "source_1.wav")
        _, mix = read_wav(mixture_wav)
        assert rate == SR and est.shape == mix.shape
        with open(out / "trace.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["iteration", "log_likelihood", "seconds"]
        assert len(rows) == 4
        manifest = dict(
            line.split("=", 1) for line in (out / "manifest.txt").read_text().splitlines()
        )
        assert manifest["method"] == "fast-mnmf"
        assert manifest["seed"] == "5"
        assert manifest["win"] == "1024"

    def test_sources_zero_is_usage_error(self, mixture_wav, tmp_path):
        with pytest.raises(SystemExit) as err:
            main([
                "separate", str(mixture_wav), "--sources", "0",
                "--out", str(tmp_path / "o"),
            ])
        assert err.value.code == 2

    def test_unknown_method_is_usage_error(self, mixture_wav, tmp_path):
        with pytest.raises(SystemExit) as err:
            main(["separate", str(mixture_wav), "--method", "pca"])
        assert err.value.code == 2

    def test_missing_input_is_io_error(self, tmp_path):
        code = main(["separate", str(tmp_path / "missing.wav"), "--iters", "1"])
        assert code == 3

    def test_deterministic_across_runs(self, mixture_wav, tmp_path):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            code = main([
                "separate", str(mixture_wav), "--method", "fast-mnmf",
                "--sources", "2", "--bases", "4", "--iters", "2", "--seed", "3",
                "--out", str(out),
            ])
            assert code == 0
            outs.append(out)
        for n in (1, 2):
            a = (outs[0] / f"source_{n}.wav").read_bytes()
            b = (outs[1] / f"source_{n}.wav").read_bytes()
            assert a == b

    def test_config_file_defaults_and_flag_precedence(self, mixture_wav, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# settings\nmethod=fast-fca\niters=2\nseed=9\n")
        out = tmp_path / "sep"
        code = main([
            "separate", str(mixture_wav), "--config", str(cfg),
            "--seed", "4", "--out", str(out),
        ])
        assert code == 0
        manifest = dict(
            line.split("=", 1) for line in (out / "manifest.txt").read_text().splitlines()
        )
        assert manifest["method"] == "fast-fca"  # from config file
        assert manifest["iters"] == "2"  # from config file
        assert manifest["seed"] == "4"  # explicit flag wins

    def test_config_unknown_key_rejected(self, mixture_wav, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("mode=fast\n")
        code = main(["separate", str(mixture_wav), "--config", str(cfg)])
        assert code == 2

    def test_default_flags(self):
        from fastsep.cli import build_parser

        args = build_parser().parse_args(["separate", "x.wav"])
        assert args.win == 1024 and args.hop == 256 and args.iters == 100


class TestSynthCommand:
    def test_file_contract(self, tmp_path):
        out = tmp_path / "scene"
        code = main([
            "synth", "--sources", "2", "--mics", "4", "--duration", "0.7",
            "--seed", "1", "--out", str(out),
        ])
        assert code == 0
        rate, mix = read_wav(out / "mixture.wav")
        assert rate == SR and mix.shape == (int(0.7 * SR), 4)
        for n in (1, 2):
            _, ref = read_wav(out / f"reference_{n}.wav")
            assert ref.shape == mix.shape
        # references sum to the mixture (all float32 writes)
        _, r1 = read_wav(out / "reference_1.wav")
        _, r2 = read_wav(out / "reference_2.wav")
        np.testing.assert_allclose(r1 + r2, mix, atol=1e-6)


class TestEvalCommand:
    def test_identical_files_hit_cap(self, tmp_path):
        scene = tmp_path / "scene"
        assert main(["synth", "--duration", "0.5", "--out", str(scene)]) == 0
        report = tmp_path / "report.csv"
        code = main([
            "eval",
            "--estimates", str(scene / "reference_1.wav"), str(scene / "reference_2.wav"),
            "--references", str(scene / "reference_1.wav"), str(scene / "reference_2.wav"),
            "--mixture", str(scene / "mixture.wav"),
            "--out", str(report),
        ])
        assert code == 0
        with open(report) as fh:
            rows = list(csv.reader(fh))
        assert len(rows) == 3
        assert float(rows[1][2]) == 100.0 and float(rows[2][2]) == 100.0

    def test_count_mismatch_is_usage_error(self, tmp_path):
        scene = tmp_path / "scene"
        assert main(["synth", "--duration", "0.5", "--out", str(scene)]) == 0
        code = main([
            "eval",
            "--estimates", str(scene / "reference_1.wav"),
            "--references", str(scene / "reference_1.wav"), str(scene / "reference_2.wav"),
            "--mixture", str(scene / "mixture.wav"),
            "--out", str(tmp_path / "r.csv"),
        ])
        assert code == 2


class TestBenchmarkCommand:
    def test_grid_rows(self, tmp_path):
        out = tmp_path / "bench.csv"
        code = main([
            "benchmark", "--methods", "fast-fca,fast-mnmf", "--sources-grid", "2",
            "--bases-grid", "2,4", "--iters", "2", "--duration", "0.6",
            "--mics", "3", "--out", str(out),
        ])
        assert code == 0
        with open(out) as fh:
            rows = list(csv.reader(fh))
        assert rows[0][0] == "method"
        assert len(rows) == 1 + 2 * 1 * 2
        assert all(float(r[4]) > 0 for r in rows[1:])

    def test_fast_beats_full_per_cell(self, tmp_path):
        out = tmp_path / "bench.csv"
        code = main([
            "benchmark", "--methods", "mnmf,fast-mnmf", "--sources-grid", "2",
            "--bases-grid", "4", "--iters", "4", "--duration", "1.5",
            "--mics", "4", "--out", str(out),
        ])
        assert code == 0
        with open(out) as fh:
            rows = list(csv.reader(fh))[1:]
        medians = {r[0]: float(r[5]) for r in rows}
        assert medians["fast-mnmf"] < medians["mnmf"]

    def test_rerun_median_variance_bounded(self, tmp_path):
        medians = []
        for name in ("x", "y"):
            out = tmp_path / f"bench_{name}.csv"
            code = main([
                "benchmark", "--methods", "fast-mnmf", "--sources-grid", "2",
                "--bases-grid", "4", "--iters", "10", "--duration", "1.0",
                "--mics", "3", "--out", str(out),
            ])
            assert code == 0
            with open(out) as fh:
                medians.append(float(list(csv.reader(fh))[1][5]))
        spread = abs(medians[0] - medians[1]) / (sum(medians) / 2)
        assert spread < 0.2


class TestFullPipeline:
    def test_synth_separate_eval_improvement(self, tmp_path):
        # easy default scenario, shortened: improvement must clear 8 dB
        scene = tmp_path / "scene"
        assert main([
            "synth", "--sources", "2", "--mics", "4", "--duration", "2.5",
            "--seed", "0", "--out", str(scene),
        ]) == 0
        sep = tmp_path / "sep"
        assert main([
            "separate", str(scene / "mixture.wav"), "--method", "fast-mnmf",
            "--sources", "2", "--bases", "16", "--iters", "100", "--seed", "0",
            "--out", str(sep),
        ]) == 0
        report = tmp_path / "report.csv"
        assert main([
            "eval",
            "--estimates", str(sep / "source_1.wav"), str(sep / "source_2.wav"),
            "--references", str(scene / "reference_1.wav"), str(scene / "reference_2.wav"),
            "--mixture", str(scene / "mixture.wav"),
            "--method", "fast-mnmf", "--out", str(report),
        ]) == 0
        with open(report) as fh:
            rows = list(csv.reader(fh))[1:]
        improvement = sum(float(r[4]) for r in rows) / len(rows)
        assert improvement >= 8.0
