import json
import tempfile
from io import StringIO
from pathlib import Path

from django.conf import settings
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import TestCase, override_settings

from bandits.models import ExperimentRun, World

WORLD_FLAGS = ["--dim", "4", "--arms", "30", "--keyterms", "8", "--users", "2"]
RUN_FLAGS = ["--horizon", "30", "--slate-size", "5", "--seeds", "0,1"]


class CommandTestCase(TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.dir = Path(self.tmp.name)
        override = override_settings(BANDITS={**settings.BANDITS, "OUTPUT_DIR": str(self.dir / "runs")})
        override.enable()
        self.addCleanup(override.disable)

    def call(self, *args):
        out = StringIO()
        call_command(*args, stdout=out, stderr=StringIO())
        return out.getvalue()

    def generate(self, name="world", *extra):
        self.call("generate", "--out", str(self.dir / name), "--seed", "3", *WORLD_FLAGS, *extra)
        return self.dir / name


class GenerateCommandTests(CommandTestCase):
    def test_writes_world(self):
        directory = self.generate()
        manifest = json.loads((directory / "world.json").read_text())
        self.assertEqual(manifest["seed"], 3)
        self.assertEqual(manifest["params"]["num_arms"], 30)
        self.assertTrue((directory / "graph.tsv").exists())

    def test_writes_logs(self):
        directory = self.generate("logged", "--logs", "10")
        for name in ("events.csv", "features.csv", "tags.csv"):
            self.assertTrue((directory / name).exists(), name)
        self.assertEqual(len((directory / "events.csv").read_text().splitlines()), 21)

    def test_record_stores_world(self):
        self.generate("recorded", "--record", "--name", "tiny")
        world = World.objects.get()
        self.assertEqual((world.name, world.seed, world.num_arms), ("tiny", 3, 30))

    def test_invalid_world(self):
        with self.assertRaises(CommandError):
            self.call("generate", "--out", str(self.dir / "bad"), "--dim", "0")


class RunCommandTests(CommandTestCase):
    def test_run_on_generated_world(self):
        world = self.generate()
        out = self.dir / "run"
        stdout = self.call(
            "run", "--world", str(world), "--out", str(out), "--policies", "linucb,conucb", *RUN_FLAGS
        )
        self.assertIn("conucb", stdout)
        self.assertTrue((out / "regret.csv").exists())
        manifest = json.loads((out / "manifest.json").read_text())
        self.assertEqual(manifest["config"]["world_seed"], 3)
        self.assertEqual(manifest["config"]["world"]["num_arms"], 30)

    def test_config_file_and_flags(self):
        config = self.dir / "experiment.json"
        config.write_text(
            json.dumps(
                {
                    "world": {"dim": 4, "num_arms": 30, "num_keyterms": 8, "num_users": 2},
                    "policies": [{"kind": "conucb", "name": "conucb-0.3", "params": {"lambda_": 0.3}}],
                    "horizon": 20,
                    "slate_size": 5,
                    "seeds": [0],
                }
            )
        )
        out = self.dir / "from-config"
        self.call("run", "--config", str(config), "--out", str(out), "--schedule", "log:2")
        manifest = json.loads((out / "manifest.json").read_text())
        self.assertEqual(manifest["config"]["schedule"], "log:2")
        self.assertEqual(manifest["config"]["policies"][0]["name"], "conucb-0.3")

    def test_record(self):
        world = self.generate()
        self.call("run", "--world", str(world), "--out", str(self.dir / "rec"), "--policies", "linucb", "--record", *RUN_FLAGS)
        run = ExperimentRun.objects.get()
        self.assertEqual(run.status, "completed")
        self.assertIsNone(run.owner)
        self.assertTrue(run.results.filter(policy="linucb", metric="regret").exists())

    def test_default_output_directory(self):
        world = self.generate()
        self.call("run", "--world", str(world), "--policies", "linucb", *RUN_FLAGS)
        self.assertTrue((self.dir / "runs" / "run-3" / "regret.csv").exists())

    def test_bad_schedule(self):
        with self.assertRaises(CommandError):
            self.call("run", "--schedule", "hourly", *RUN_FLAGS)

    def test_bad_config_file(self):
        config = self.dir / "broken.json"
        config.write_text("{not json")
        with self.assertRaises(CommandError):
            self.call("run", "--config", str(config))

    def test_bound_constraint_violation(self):
        with self.assertRaises(CommandError):
            self.call("run", "--policies", "conucb", "--bound", *WORLD_FLAGS, *RUN_FLAGS)

    def test_report_reaggregates(self):
        world = self.generate()
        out = self.dir / "run"
        self.call("run", "--world", str(world), "--out", str(out), "--policies", "linucb", *RUN_FLAGS)
        again = self.dir / "again"
        stdout = self.call("report", str(out), "--out", str(again))
        self.assertIn("linucb", stdout)
        self.assertEqual((out / "regret.csv").read_bytes(), (again / "regret.csv").read_bytes())

    def test_report_on_missing_directory(self):
        with self.assertRaises(CommandError):
            self.call("report", str(self.dir / "absent"))


class SweepCommandTests(CommandTestCase):
    def test_schedule_sweep(self):
        world = self.generate()
        out = self.dir / "sweep"
        self.call(
            "sweep", "--world", str(world), "--out", str(out), "--policies", "conucb",
            "--schedules", "none,log:5", *RUN_FLAGS,
        )
        table = (out / "comparison.csv").read_text().splitlines()
        self.assertTrue(table[0].startswith("schedule,policy"))
        self.assertEqual(len(table), 3)

    def test_pool_size_sweep(self):
        world = self.generate()
        out = self.dir / "pools"
        self.call(
            "sweep", "--world", str(world), "--out", str(out), "--policies", "linucb",
            "--pool-sizes", "3,6", *RUN_FLAGS,
        )
        self.assertTrue((out / "comparison.csv").read_text().startswith("pool_size,policy"))

    def test_recorded_schedule_sweep(self):
        world = self.generate()
        self.call(
            "sweep", "--world", str(world), "--out", str(self.dir / "rec"), "--policies", "conucb",
            "--schedules", "none,log:5", "--record", *RUN_FLAGS,
        )
        run = ExperimentRun.objects.get()
        self.assertEqual(run.kind, "sweep")
        self.assertEqual(run.results.filter(metric="regret").count(), 2)


class ReplayCommandTests(CommandTestCase):
    def test_replay_generated_logs(self):
        logs = self.generate("logs", "--logs", "20")
        out = self.dir / "replay"
        stdout = self.call(
            "replay",
            "--events", str(logs / "events.csv"),
            "--features", str(logs / "features.csv"),
            "--tags", str(logs / "tags.csv"),
            "--pool-size", "5",
            "--window", "10",
            "--policies", "linucb,conucb",
            "--seeds", "0",
            "--out", str(out),
        )
        self.assertIn("CTR", stdout)
        self.assertTrue((out / "replay_conucb.csv").exists())

    def test_conversational_replay_without_tags(self):
        logs = self.generate("logs", "--logs", "5")
        with self.assertRaises(CommandError):
            self.call(
                "replay",
                "--events", str(logs / "events.csv"),
                "--features", str(logs / "features.csv"),
                "--policies", "conucb",
            )

    def test_missing_dataset(self):
        with self.assertRaises(CommandError):
            self.call("replay", "--policies", "linucb")
