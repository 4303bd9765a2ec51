import json
from pathlib import Path

import numpy as np
import pytest

from illsrec.cli import (
    ConfigError,
    ExperimentConfig,
    _build_config,
    data_stats,
    main,
    run_experiment,
    substream_seed,
    sweep_k,
)
from illsrec.dataset import read_split
from illsrec.synth import movielens_like, write_ratings


@pytest.fixture(scope="module")
def ratings_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "ratings.tsv"
    write_ratings(movielens_like(seed=5, users=60, items=90, records=2600), path)
    return str(path)


def config_for(ratings_file, out, **kw):
    defaults = dict(input=ratings_file, out=str(out), mode="probs-only",
                    k_grid=(0.2, 0.5, 0.8), mask_fraction=0.05, max_iters=3,
                    lists=(5, 10), seed=4)
    defaults.update(kw)
    return ExperimentConfig(**defaults)


def read_all_outputs(out):
    return {p.name: p.read_bytes() for p in sorted(Path(out).iterdir())}


class TestConfig:
    def test_defaults_valid(self, ratings_file):
        ExperimentConfig(input=ratings_file).validate()

    def test_bad_values_rejected(self, ratings_file):
        bad = [dict(mode="bogus"), dict(ratio=1.5), dict(threshold=float("nan")),
               dict(delimiter="ab"), dict(k_grid=(0.5, 0.2)), dict(baseline_k=0.0),
               dict(max_iters=0), dict(tol=0.0), dict(mask_fraction=1.0),
               dict(lists=()), dict(seed=-1)]
        for kw in bad:
            with pytest.raises(ConfigError):
                ExperimentConfig(input=ratings_file, **kw).validate()

    def test_substream_seeds_differ(self):
        assert substream_seed(7, 1) != substream_seed(7, 2)
        assert substream_seed(7, 1) == substream_seed(7, 1)


class TestModes:
    def test_probs_only_outputs(self, ratings_file, tmp_path):
        report = run_experiment(config_for(ratings_file, tmp_path / "o"))
        assert 0.5 < report.auc <= 1.0
        produced = {p.name for p in (tmp_path / "o").iterdir()}
        assert produced == {"report.json", "curves.csv"}
        payload = json.loads((tmp_path / "o" / "report.json").read_text())
        assert payload["mode"] == "probs-only"
        assert set(payload["precision"]) == {"5", "10"}

    def test_ills_outputs_trace(self, ratings_file, tmp_path):
        report = run_experiment(config_for(ratings_file, tmp_path / "o", mode="ills"))
        trace = json.loads((tmp_path / "o" / "trace.json").read_text())
        assert trace["chosen_k"] == report.chosen_k
        assert len(trace["nrmse"]) == trace["iterations"] <= 3

    def test_raw_ills_runs(self, ratings_file, tmp_path):
        report = run_experiment(config_for(ratings_file, tmp_path / "o", mode="raw-ills"))
        assert 0.0 <= report.auc <= 1.0
        assert report.chosen_k is None

    def test_mode_isolation_on_spread_entries(self, ratings_file, tmp_path):
        # probs-only and ills must agree wherever nothing was imputed
        from illsrec import dataset, spreading, imputation
        from illsrec.cli import _load_split, _ills_config
        config = config_for(ratings_file, tmp_path / "o", mode="ills")
        split = _load_split(config)
        graph = dataset.build_graph(split.training)
        probs_scores = spreading.densify(graph)
        ills_scores, _ = imputation.run_ills(probs_scores, _ills_config(config, graph.user_count))
        keep = (probs_scores.provenance == spreading.SPREAD) | \
               (probs_scores.provenance == spreading.OBSERVED)
        np.testing.assert_array_equal(ills_scores.values[keep], probs_scores.values[keep])

    def test_dump_scores_flag(self, ratings_file, tmp_path):
        config = config_for(ratings_file, tmp_path / "o", dump_scores=True)
        run_experiment(config)
        assert (tmp_path / "o" / "scores.bin").exists()
        assert (tmp_path / "o" / "provenance.bin").exists()


class TestDeterminism:
    @pytest.mark.parametrize("mode", ["probs-only", "ills", "raw-ills"])
    def test_identical_runs_identical_bytes(self, ratings_file, tmp_path, mode):
        run_experiment(config_for(ratings_file, tmp_path / "a", mode=mode, dump_scores=True))
        run_experiment(config_for(ratings_file, tmp_path / "b", mode=mode, dump_scores=True))
        assert read_all_outputs(tmp_path / "a") == read_all_outputs(tmp_path / "b")

    def test_seed_changes_report(self, ratings_file, tmp_path):
        a = run_experiment(config_for(ratings_file, tmp_path / "a", seed=1))
        b = run_experiment(config_for(ratings_file, tmp_path / "b", seed=2))
        assert a.auc != b.auc


class TestSweepAndStats:
    def test_sweep_rows_match_grid(self, ratings_file, tmp_path):
        config = config_for(ratings_file, tmp_path / "o", mode="ills")
        curve = sweep_k(config)
        lines = (tmp_path / "o" / "ksweep.csv").read_text().splitlines()
        assert lines[0] == "K,K_fraction,NRMSE"
        assert len(lines) == 1 + len(config.k_grid) == 1 + len(curve)

    def test_sweep_requires_ills_mode(self, ratings_file, tmp_path):
        with pytest.raises(ConfigError):
            sweep_k(config_for(ratings_file, tmp_path / "o", mode="probs-only"))

    def test_sweep_minimum_matches_select_k(self, ratings_file, tmp_path):
        from illsrec import dataset, spreading, imputation
        from illsrec.cli import _load_split, _ills_config
        config = config_for(ratings_file, tmp_path / "o", mode="ills")
        curve = sweep_k(config)
        best = min(curve, key=lambda point: (point[2], point[1]))
        split = _load_split(config)
        graph = dataset.build_graph(split.training)
        scores = spreading.densify(graph)
        assert imputation.select_k(scores, _ills_config(config, graph.user_count)) == best[1]

    def test_stats_report(self, ratings_file, tmp_path):
        stats = data_stats(config_for(ratings_file, tmp_path / "o"))
        assert stats["users"] == 60 and stats["items"] == 90
        assert 0 < stats["density"] < 1
        assert stats["density_after_spreading"] > stats["training_density"]
        assert json.loads((tmp_path / "o" / "stats.json").read_text()) == stats


class TestMainEntry:
    def test_run_roundtrip(self, ratings_file, tmp_path, capsys):
        code = main(["run", "--input", ratings_file, "--mode", "probs-only",
                     "--seed", "4", "--lists", "5,10", "--out", str(tmp_path / "o")])
        assert code == 0
        assert "auc=" in capsys.readouterr().out

    def test_split_subcommand(self, ratings_file, tmp_path):
        out = tmp_path / "split"
        assert main(["split", "--input", ratings_file, "--seed", "4",
                     "--out", str(out)]) == 0
        loaded = read_split(out)
        assert len(loaded.probe) > 0
        assert not (loaded.probe.links & loaded.training.links)

    def test_synth_subcommand(self, tmp_path):
        out = tmp_path / "synthetic.tsv"
        assert main(["synth", "--users", "30", "--items", "60", "--records", "900",
                     "--seed", "1", "--out", str(out)]) == 0
        assert len(out.read_text().splitlines()) == 900

    def test_config_file_with_flag_override(self, ratings_file, tmp_path, capsys):
        cfg = tmp_path / "config.json"
        cfg.write_text(json.dumps({"input": ratings_file, "mode": "probs-only",
                                   "seed": 4, "lists": [5], "out": str(tmp_path / "x")}))
        assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "y")]) == 0
        assert (tmp_path / "y" / "report.json").exists()
        assert not (tmp_path / "x").exists()

    def test_unknown_config_key_rejected(self, ratings_file, tmp_path):
        cfg = tmp_path / "config.json"
        cfg.write_text(json.dumps({"input": ratings_file, "bogus": 1}))
        assert main(["run", "--config", str(cfg)]) == 1

    def test_exit_code_config_error(self, ratings_file):
        assert main(["run", "--input", ratings_file, "--ratio", "2.0"]) == 1

    def test_exit_code_missing_file(self, tmp_path):
        assert main(["run", "--input", str(tmp_path / "nope.tsv")]) == 2

    def test_exit_code_parse_error(self, tmp_path):
        bad = tmp_path / "bad.tsv"
        bad.write_text("1\t2\n")
        assert main(["run", "--input", str(bad)]) == 2

    def test_exit_code_numeric_failure(self, tmp_path):
        # hub-and-leaf wheel: after removing the single probe link, every
        # off-profile spread value is identical by symmetry, so the
        # validation truths are constant and NRMSE is undefined
        lines = []
        for u in range(40):
            lines.append(f"{u + 1}\t1\t5\t0")        # shared hub item
            lines.append(f"{u + 1}\t{u + 2}\t5\t0")  # private leaf item
        path = tmp_path / "wheel.tsv"
        path.write_text("\n".join(lines) + "\n")
        code = main(["run", "--input", str(path), "--mode", "ills",
                     "--ratio", "0.01", "--mask-fraction", "0.05",
                     "--out", str(tmp_path / "o")])
        assert code == 3
