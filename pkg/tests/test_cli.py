"""Command-line behavior: exit codes, output shape, and wiring."""

import contextlib
import io
import shutil

import pytest
from scenelib import build_clip, deploy, mini_config, mini_video

from panoanno.cli import main
from panoanno.metrics import score_store_video
from panoanno.store import Revision, Store, serialize_revision


@pytest.fixture(scope="module")
def annotated(tmp_path_factory):
    """The static scene annotated once through the command line."""

    root = tmp_path_factory.mktemp("cli-static")
    scn, paths, config, toml = deploy(root, "static")
    with contextlib.redirect_stdout(io.StringIO()):
        rc = main(["annotate", "--config", str(toml), str(paths.video_dir)])
    assert rc == 0
    return scn, paths, config, toml, Store(config.store_root)


class TestUsageErrors:
    def test_unknown_flag_exits_2(self, capsys):
        assert main(["annotate", "--bogus"]) == 2
        assert "usage:" in capsys.readouterr().err

    def test_unknown_subcommand_exits_2(self, capsys):
        assert main(["frobnicate"]) == 2

    def test_no_subcommand_exits_2(self, capsys):
        assert main([]) == 2

    def test_help_exits_0(self, capsys):
        assert main(["--help"]) == 0
        assert "annotate" in capsys.readouterr().out

    def test_missing_required_argument_exits_2(self, capsys):
        assert main(["ingest"]) == 2


class TestIngestCommand:
    def test_ingest_prints_summary(self, tmp_path, capsys):
        config = mini_config(tmp_path)
        mini_video(tmp_path / "clips" / "clip", 10)
        rc = main(
            ["ingest", "--config", str(tmp_path / "cfg.toml"),
             str(tmp_path / "clips" / "clip")]
        )
        assert rc == 0
        assert capsys.readouterr().out == "ingested clip frames=10 fps=2.0\n"

    def test_short_clip_is_a_domain_error(self, tmp_path, capsys):
        mini_config(tmp_path)
        mini_video(tmp_path / "clips" / "blip", 4)
        rc = main(
            ["ingest", "--config", str(tmp_path / "cfg.toml"),
             str(tmp_path / "clips" / "blip")]
        )
        assert rc == 1
        err = capsys.readouterr().err
        assert err.startswith("error:")
        assert "shorter" in err

    def test_overrides_beat_the_file(self, tmp_path, capsys):
        mini_config(tmp_path, width=64, height=32)
        mini_video(tmp_path / "clips" / "sq", 10, width=32, height=32)
        base = ["ingest", "--config", str(tmp_path / "cfg.toml")]
        assert main(base + [str(tmp_path / "clips" / "sq")]) == 1
        rc = main(
            base
            + ["--set", "ingest.width=32", str(tmp_path / "clips" / "sq")]
        )
        assert rc == 0

    def test_unknown_override_key_is_rejected(self, tmp_path, capsys):
        mini_config(tmp_path)
        mini_video(tmp_path / "clips" / "clip", 10)
        rc = main(
            ["ingest", "--config", str(tmp_path / "cfg.toml"),
             "--set", "ingest.wibble=3", str(tmp_path / "clips" / "clip")]
        )
        assert rc == 1
        assert "wibble" in capsys.readouterr().err


class TestAnnotateCommand:
    def test_annotate_reports_score_and_digest(self, annotated, capsys):
        scn, paths, config, toml, store = annotated
        rc = main(["annotate", "--config", str(toml), scn.name])
        assert rc == 0
        out = capsys.readouterr().out
        assert out == (
            f"annotated {scn.name} score=10.0 issues=0 "
            f"digest={store.digest(scn.name)}\n"
        )
        assert store.manifest(scn.name).status == "checked"

    def test_unknown_target_is_a_domain_error(self, annotated, capsys):
        _, _, _, toml, _ = annotated
        rc = main(["annotate", "--config", str(toml), "nosuch"])
        assert rc == 1
        assert "nosuch" in capsys.readouterr().err

    def test_parallel_jobs_annotate_both_videos(self, tmp_path, capsys):
        scn, paths, config, toml = deploy(tmp_path, "static")
        twin = paths.video_dir.parent / "twin"
        shutil.copytree(paths.video_dir, twin)
        rc = main(
            ["annotate", "--config", str(toml), "--jobs", "2",
             str(paths.video_dir), str(twin)]
        )
        assert rc == 0
        out = capsys.readouterr().out.splitlines()
        assert out[0].startswith(f"annotated {scn.name} score=10.0")
        assert out[1].startswith("annotated twin score=10.0")
        store = Store(config.store_root)
        assert store.manifest("twin").status == "checked"

    def test_zero_jobs_is_a_domain_error(self, annotated, capsys):
        scn, _, _, toml, _ = annotated
        assert main(["annotate", "--config", str(toml), "--jobs", "0",
                     scn.name]) == 1


class TestRefineCommand:
    def test_refine_reprints_the_report(self, annotated, capsys):
        scn, _, _, toml, _ = annotated
        rc = main(["refine", "--config", str(toml), scn.name])
        assert rc == 0
        assert capsys.readouterr().out == (
            f"checked {scn.name} score=10.0 issues=0\n"
        )


class TestMetricsCommand:
    def test_identical_stores_score_one(self, annotated, capsys):
        scn, _, config, _, _ = annotated
        rc = main(["metrics", str(config.store_root), str(config.store_root)])
        assert rc == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0].split() == ["video", "J", "F", "J&F"]
        assert lines[1].split() == [scn.name, "1.000", "1.000", "1.000"]
        assert lines[2].split() == ["mean", "1.000", "1.000", "1.000"]

    def test_shifted_store_scores_match_the_library(self, tmp_path, capsys):
        build_clip(tmp_path / "ref")
        build_clip(tmp_path / "pred", col0=9)
        pred = Store(tmp_path / "pred" / "store")
        ref = Store(tmp_path / "ref" / "store")
        rc = main(
            ["metrics", str(tmp_path / "pred" / "store"),
             str(tmp_path / "ref" / "store")]
        )
        assert rc == 0
        scores = score_store_video(pred, ref, "clip")
        lines = capsys.readouterr().out.splitlines()
        assert lines[1].split() == [
            "clip",
            f"{scores.j:.3f}",
            f"{scores.f:.3f}",
            f"{scores.jf:.3f}",
        ]
        row = [float(tok) for tok in lines[2].split()[1:]]
        assert row[2] == float(f"{(scores.j + scores.f) / 2:.3f}")

    def test_empty_reference_store_is_a_domain_error(self, tmp_path, capsys):
        (tmp_path / "a").mkdir()
        (tmp_path / "b").mkdir()
        rc = main(["metrics", str(tmp_path / "a"), str(tmp_path / "b")])
        assert rc == 1


class TestValidateCommand:
    def test_clean_store_validates(self, annotated, capsys):
        scn, _, config, _, _ = annotated
        rc = main(["validate", "--store", str(config.store_root)])
        assert rc == 0
        assert capsys.readouterr().out == f"ok {scn.name}\n"

    def test_corrupted_frame_fails_validation(self, tmp_path, capsys):
        _, store = build_clip(tmp_path)
        frame = store.video_dir("clip") / "frames" / "000003.ann"
        frame.write_text(frame.read_text("ascii")[:40], encoding="ascii")
        rc = main(["validate", "--store", str(store.root)])
        assert rc == 1
        captured = capsys.readouterr()
        assert "invalid clip" in captured.out
        assert "failed validation" in captured.err

    def test_store_from_settings_file(self, annotated, capsys):
        scn, _, _, toml, _ = annotated
        rc = main(["validate", "--config", str(toml)])
        assert rc == 0
        assert capsys.readouterr().out == f"ok {scn.name}\n"


class TestStatsCommand:
    def test_distributions_for_the_golden_scene(self, annotated, capsys):
        scn, _, config, _, store = annotated
        rc = main(["stats", "--store", str(config.store_root)])
        assert rc == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "videos 1"
        assert lines[1] == f"instances {scn.name} 4"
        labels = sorted(store.instances(scn.name).values())
        assert lines[2:6] == [f"label {name} 1" for name in labels]
        assert lines[6] == (
            f"coverage {scn.name} mean=1.000000 min=1.000000 max=1.000000"
        )


class TestReviewCommands:
    def test_export_then_import_finalizes(self, tmp_path, capsys):
        scn, paths, config, toml = deploy(tmp_path, "static")
        assert main(["annotate", "--config", str(toml),
                     str(paths.video_dir)]) == 0
        bundle = tmp_path / "bundle"
        rc = main(["review", "export", "--config", str(toml), scn.name,
                   str(bundle)])
        assert rc == 0
        assert (bundle / "report").exists()
        record = serialize_revision(
            Revision(seq=1, op="relabel", instance_id=1, label="panel")
        )
        (bundle / "revisions.log").write_text(record, encoding="ascii")
        capsys.readouterr()
        rc = main(["review", "import", "--config", str(toml), scn.name,
                   str(bundle)])
        assert rc == 0
        assert capsys.readouterr().out == f"imported {scn.name} applied=1\n"
        store = Store(config.store_root)
        assert store.manifest(scn.name).status == "finalized"
        assert store.instances(scn.name)[1] == "panel"

    def test_export_before_check_is_a_domain_error(self, tmp_path, capsys):
        config, store = build_clip(tmp_path, status="annotated")
        rc = main(["review", "export", "--config", str(tmp_path / "cfg.toml"),
                   "clip", str(tmp_path / "bundle")])
        assert rc == 1
        assert "checked" in capsys.readouterr().err


class TestReviewServe:
    def test_refuses_to_serve_without_a_token(self, tmp_path, monkeypatch,
                                              capsys):
        build_clip(tmp_path)
        monkeypatch.delenv("PANOANNO_API_TOKEN", raising=False)
        rc = main(["review", "serve", "--config",
                   str(tmp_path / "cfg.toml")])
        assert rc == 1
        assert "PANOANNO_API_TOKEN" in capsys.readouterr().err

    def test_serves_with_token_from_the_environment(self, tmp_path,
                                                    monkeypatch):
        build_clip(tmp_path)
        monkeypatch.setenv("PANOANNO_API_TOKEN", "hunter2")
        calls = {}

        def fake_serve(app, host, port):
            calls["app"], calls["host"], calls["port"] = app, host, port

        import panoanno.service

        monkeypatch.setattr(panoanno.service, "serve", fake_serve)
        rc = main(["review", "serve", "--config", str(tmp_path / "cfg.toml"),
                   "--port", "9999"])
        assert rc == 0
        assert calls["port"] == 9999
        assert calls["app"].state.store.root == Store(
            tmp_path / "store"
        ).root

    def test_anonymous_flag_allows_serving_untokened(self, tmp_path,
                                                     monkeypatch):
        build_clip(tmp_path)
        monkeypatch.delenv("PANOANNO_API_TOKEN", raising=False)
        served = {}
        import panoanno.service

        monkeypatch.setattr(
            panoanno.service, "serve",
            lambda app, host, port: served.update(app=app),
        )
        rc = main(["review", "serve", "--config", str(tmp_path / "cfg.toml"),
                   "--allow-anonymous"])
        assert rc == 0
        assert "app" in served

    def test_missing_ui_root_is_a_domain_error(self, tmp_path, monkeypatch,
                                               capsys):
        build_clip(tmp_path)
        monkeypatch.setenv("PANOANNO_API_TOKEN", "hunter2")
        rc = main(["review", "serve", "--config", str(tmp_path / "cfg.toml"),
                   "--ui-root", str(tmp_path / "nope")])
        assert rc == 1
        assert "ui-root" in capsys.readouterr().err
