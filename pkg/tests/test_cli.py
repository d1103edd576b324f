"""End-to-end checks of the command-line harness on tiny corpora."""

import csv
import json

import pytest

from attrinject.cli import EXIT_CHECK, EXIT_CONFIG, EXIT_DATA, EXIT_OK, main
from attrinject.data import (
    InteractionSpec,
    TransferSpec,
    generate_interaction_corpus,
    generate_transfer_data,
    save_corpus,
    write_transfer_sidecar,
)


@pytest.fixture(scope="module")
def tiny_corpus_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus")
    spec = InteractionSpec(train_docs=48, dev_docs=24, test_docs=24, mark_rate=0.3)
    save_corpus(generate_interaction_corpus(spec, seed=5), d)
    return d


@pytest.fixture(scope="module")
def tiny_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("conf") / "run.conf"
    path.write_text(
        "representation = chunk\n"
        "sites = classify\n"
        "embed_dim = 12\nword_dim = 12\nhidden_dim = 8\nattn_dim = 8\n"
        "user_dim = 4\nproduct_dim = 4\n"
        "batch_size = 8\nmax_epochs = 4\npatience = 4\nseed = 1\n"
        "min_word_freq = 1\n"
    )
    return path


class TestTrainCommand:
    def test_trains_and_writes_artifacts(self, tiny_corpus_dir, tiny_config, tmp_path):
        out = tmp_path / "run"
        code = main([
            "train", "--config", str(tiny_config),
            "--corpus-dir", str(tiny_corpus_dir), "--out", str(out),
        ])
        assert code == EXIT_OK
        assert (out / "checkpoint.bin").exists()
        metrics_lines = (out / "metrics.jsonl").read_text().strip().splitlines()
        assert len(metrics_lines) == 4
        record = json.loads(metrics_lines[0])
        assert {"epoch", "loss", "dev_acc", "dev_rmse", "seconds"} <= set(record)
        ledger = [json.loads(l) for l in (out / "ledger.jsonl").read_text().splitlines()]
        assert ledger[0]["command"] == "train"
        assert ledger[0]["config_hash"]

    def test_deterministic_given_seed(self, tiny_corpus_dir, tiny_config, tmp_path):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            main([
                "train", "--config", str(tiny_config),
                "--corpus-dir", str(tiny_corpus_dir), "--out", str(out),
            ])
            records = [
                json.loads(l)
                for l in (out / "ledger.jsonl").read_text().splitlines()
            ]
            outs.append(records[0])
        assert outs[0]["metrics"] == outs[1]["metrics"]
        assert outs[0]["config_hash"] == outs[1]["config_hash"]
        checkpoints = [
            (tmp_path / name / "checkpoint.bin").read_bytes() for name in ("a", "b")
        ]
        assert checkpoints[0] == checkpoints[1]

    def test_invalid_config_key_exits_2(self, tiny_corpus_dir, tmp_path):
        bad = tmp_path / "bad.conf"
        bad.write_text("sitez = attend\n")
        code = main([
            "train", "--config", str(bad),
            "--corpus-dir", str(tiny_corpus_dir), "--out", str(tmp_path / "x"),
        ])
        assert code == EXIT_CONFIG

    def test_missing_corpus_exits_3(self, tiny_config, tmp_path):
        code = main([
            "train", "--config", str(tiny_config),
            "--corpus-dir", str(tmp_path / "nowhere"), "--out", str(tmp_path / "x"),
        ])
        assert code == EXIT_DATA


class TestParamsCommand:
    def test_paper_scale_ratio(self, tmp_path, capsys):
        conf = tmp_path / "paper.conf"
        conf.write_text(
            "representation = chunk\nsites = embed\n"
            "embed_dim = 300\nword_dim = 300\nhidden_dim = 300\n"
            "chunk_rows = 15\nchunk_cols = 15\n"
        )
        assert main(["params", "--config", str(conf)]) == EXIT_OK
        out = capsys.readouterr().out
        assert "ratio: 225" in out

    def test_base_model_zero_attribute_params(self, tmp_path, capsys):
        conf = tmp_path / "base.conf"
        conf.write_text("representation = none\n")
        assert main(["params", "--config", str(conf)]) == EXIT_OK
        table = json.loads(capsys.readouterr().out.rsplit("\n", 2)[0])
        assert table["attribute_total"] == 0


class TestStatsCommand:
    def test_stats_output(self, tiny_corpus_dir, capsys):
        assert main(["stats", "--corpus-dir", str(tiny_corpus_dir)]) == EXIT_OK
        stats = json.loads(capsys.readouterr().out)
        assert stats["train"] == 48
        assert stats["users"] == 8


class TestSweepCommand:
    def test_grid_smoke_structure(self, tiny_corpus_dir, tiny_config, tmp_path, capsys):
        out = tmp_path / "sweep"
        code = main([
            "sweep", "--mode", "grid", "--config", str(tiny_config),
            "--corpus-dir", str(tiny_corpus_dir), "--out", str(out),
            "--epochs", "2", "--seed", "3",
        ])
        assert code == EXIT_OK
        with open(out / "grid.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["", "embed", "encode", "attend", "classify"]
        labels = [row[0] for row in rows[1:]]
        assert labels == ["embed", "encode", "attend", "classify"]
        ledger = [json.loads(l) for l in (out / "ledger.jsonl").read_text().splitlines()]
        cells = {rec["metrics"]["cell"]: rec["metrics"]["dev_accuracy"] for rec in ledger}
        assert len(cells) == 10  # 4 single + 6 joint
        # Diagonal equals the single accuracies; off-diagonal is the
        # row-relative difference of the joint cell.
        singles = {site: cells[f"chunk:{site}"] for site in labels}
        for i, row_site in enumerate(labels):
            assert float(rows[1 + i][1 + i]) == pytest.approx(singles[row_site], abs=1e-4)
            for j, col_site in enumerate(labels):
                if i == j:
                    continue
                joint_key = "chunk:" + "+".join(
                    s for s in ("embed", "encode", "attend", "classify")
                    if s in (row_site, col_site)
                )
                expected = cells[joint_key] - singles[row_site]
                assert float(rows[1 + i][1 + j]) == pytest.approx(expected, abs=1e-4)

    def test_single_mode_has_nine_cells(self, tiny_corpus_dir, tiny_config, tmp_path):
        out = tmp_path / "nine"
        code = main([
            "sweep", "--mode", "single", "--config", str(tiny_config),
            "--corpus-dir", str(tiny_corpus_dir), "--out", str(out),
            "--epochs", "1", "--seed", "0",
        ])
        assert code == EXIT_OK
        ledger = [json.loads(l) for l in (out / "ledger.jsonl").read_text().splitlines()]
        assert len(ledger) == 9

    def test_cell_combinatorics(self):
        from attrinject.cli import _sweep_cells

        assert len(_sweep_cells("single")) == 9
        assert len(_sweep_cells("joint")) == 6
        grid = _sweep_cells("grid")
        singles = [c for c in grid if len(c[1]) == 1]
        joints = [c for c in grid if len(c[1]) == 2]
        assert len(singles) == 4 and len(joints) == 6


@pytest.fixture(scope="module")
def transfer_setup(tmp_path_factory, tiny_config):
    base = tmp_path_factory.mktemp("transfer")
    spec = TransferSpec(num_users=12, num_products=12,
                        train_docs=72, dev_docs=24, test_docs=24)
    corpus, records = generate_transfer_data(spec, seed=4)
    corpus_dir = base / "corpus"
    save_corpus(corpus, corpus_dir)
    sidecar = base / "sidecar.tsv"
    write_transfer_sidecar(records, sidecar)
    run_dir = base / "pretrain"
    code = main([
        "train", "--config", str(tiny_config),
        "--corpus-dir", str(corpus_dir), "--out", str(run_dir),
    ])
    assert code == EXIT_OK
    return run_dir / "checkpoint.bin", sidecar, base


class TestTransferCommand:
    def test_category_task(self, transfer_setup, capsys):
        checkpoint, sidecar, base = transfer_setup
        code = main([
            "transfer", "--checkpoint", str(checkpoint), "--sidecar", str(sidecar),
            "--task", "category", "--out", str(base / "cat"), "--runs", "3",
        ])
        assert code == EXIT_OK
        out = capsys.readouterr().out
        assert "majority=" in out and "learned=" in out

    def test_headline_task(self, transfer_setup, capsys):
        checkpoint, sidecar, base = transfer_setup
        code = main([
            "transfer", "--checkpoint", str(checkpoint), "--sidecar", str(sidecar),
            "--task", "headline", "--out", str(base / "head"),
            "--decoder-hidden", "16",
        ])
        assert code == EXIT_OK
        assert "headline:" in capsys.readouterr().out

    def test_both_tasks_share_one_ledger_record(self, transfer_setup):
        checkpoint, sidecar, base = transfer_setup
        out = base / "both"
        code = main([
            "transfer", "--checkpoint", str(checkpoint), "--sidecar", str(sidecar),
            "--task", "both", "--out", str(out), "--runs", "2",
            "--decoder-hidden", "8",
        ])
        assert code == EXIT_OK
        records = [
            json.loads(l) for l in (out / "ledger.jsonl").read_text().splitlines()
        ]
        assert len(records) == 1
        assert {"category", "headline"} <= set(records[0]["metrics"])

    def test_base_checkpoint_rejected(self, tiny_corpus_dir, tmp_path):
        conf = tmp_path / "base.conf"
        conf.write_text(
            "representation = none\nembed_dim = 8\nword_dim = 8\nhidden_dim = 4\n"
            "max_epochs = 1\npatience = 1\nbatch_size = 8\nmin_word_freq = 1\n"
        )
        run = tmp_path / "baserun"
        main([
            "train", "--config", str(conf),
            "--corpus-dir", str(tiny_corpus_dir), "--out", str(run),
        ])
        sidecar = tmp_path / "sidecar.tsv"
        sidecar.write_text("u1\tp1\t0\t0 2 1\n")
        code = main([
            "transfer", "--checkpoint", str(run / "checkpoint.bin"),
            "--sidecar", str(sidecar), "--out", str(tmp_path / "t"),
        ])
        assert code == EXIT_DATA


class TestGradcheckCommand:
    def test_check_failure_exits_4(self, monkeypatch, capsys):
        from attrinject import cli as cli_mod
        from attrinject.gradcheck import CheckReport, GroupReport

        broken = CheckReport(
            label="stub",
            groups=[GroupReport(name="w", max_relative_error=0.5, checked=4)],
        )
        monkeypatch.setattr(cli_mod, "run_standard_checks", lambda seed: [broken])
        assert main(["gradcheck"]) == EXIT_CHECK
        assert "FAIL" in capsys.readouterr().out


class TestOffgridFlag:
    def test_bias_at_classifier_is_flagged(self, tiny_corpus_dir, tmp_path, capsys):
        conf = tmp_path / "offgrid.conf"
        conf.write_text(
            "representation = bias\nsites = classify\n"
            "embed_dim = 8\nword_dim = 8\nhidden_dim = 4\nattn_dim = 4\n"
            "user_dim = 4\nproduct_dim = 4\n"
            "batch_size = 8\nmax_epochs = 1\npatience = 1\nmin_word_freq = 1\n"
        )
        out = tmp_path / "run"
        code = main([
            "train", "--config", str(conf),
            "--corpus-dir", str(tiny_corpus_dir), "--out", str(out),
        ])
        assert code == EXIT_OK
        assert "outside the standard comparison grid" in capsys.readouterr().err
        record = json.loads((out / "ledger.jsonl").read_text().splitlines()[0])
        assert record["config"]["offgrid_bias_sites"] == ["classify"]


class TestSynthCommand:
    def test_writes_interaction_corpus(self, tmp_path):
        out = tmp_path / "synth"
        assert main(["synth", "--kind", "interaction", "--out", str(out)]) == EXIT_OK
        assert (out / "train.txt").exists()

    def test_writes_transfer_sidecar(self, tmp_path):
        out = tmp_path / "synth2"
        assert main(["synth", "--kind", "transfer", "--out", str(out)]) == EXIT_OK
        assert (out / "sidecar.tsv").exists()
