import tempfile
from pathlib import Path

import numpy as np
from django.conf import settings
from django.contrib.auth.models import User
from django.test import override_settings
from django.urls import reverse
from rest_framework import status
from rest_framework.test import APITestCase

from bandits.models import ExperimentRun, PolicyResult, World
from bandits.replay import synthesize_logs
from bandits.simulation import WorldParams, generate_world

TINY_WORLD = {
    "dim": 4,
    "num_arms": 30,
    "num_keyterms": 8,
    "num_users": 2,
    "max_keyterms_per_arm": 3,
}


def tiny_config(**changes):
    config = {
        "world": TINY_WORLD,
        "policies": [{"kind": "linucb"}, {"kind": "conucb"}],
        "horizon": 30,
        "slate_size": 5,
        "seeds": [0],
    }
    config.update(changes)
    return config


class BanditAPITestCase(APITestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        override = override_settings(BANDITS={**settings.BANDITS, "OUTPUT_DIR": self.tmp.name})
        override.enable()
        self.addCleanup(override.disable)
        self.user = User.objects.create_user(username="alice", password="s3cure-Passw0rd")
        self.other = User.objects.create_user(username="bob", password="s3cure-Passw0rd")
        self.staff = User.objects.create_user(username="admin", password="s3cure-Passw0rd", is_staff=True)
        self.client.force_authenticate(self.user)


class AuthTests(APITestCase):
    def test_register_returns_tokens(self):
        response = self.client.post(
            reverse("register"),
            {
                "username": "carol",
                "email": "carol@example.com",
                "password": "an0ther-Passw0rd",
                "password2": "an0ther-Passw0rd",
            },
        )
        self.assertEqual(response.status_code, status.HTTP_201_CREATED)
        self.assertIn("access", response.data["tokens"])
        self.assertEqual(response.data["user"]["username"], "carol")

    def test_register_password_mismatch(self):
        response = self.client.post(
            reverse("register"),
            {"username": "carol", "password": "an0ther-Passw0rd", "password2": "different-Passw0rd"},
        )
        self.assertEqual(response.status_code, status.HTTP_400_BAD_REQUEST)

    def test_login(self):
        User.objects.create_user(username="dave", password="s3cure-Passw0rd")
        response = self.client.post(reverse("login"), {"username": "dave", "password": "s3cure-Passw0rd"})
        self.assertEqual(response.status_code, status.HTTP_200_OK)
        self.assertIn("refresh", response.data["tokens"])

    def test_login_bad_credentials(self):
        response = self.client.post(reverse("login"), {"username": "nobody", "password": "x"})
        self.assertEqual(response.status_code, status.HTTP_400_BAD_REQUEST)

    def test_anonymous_requests_rejected(self):
        self.assertEqual(self.client.get(reverse("run_list")).status_code, status.HTTP_401_UNAUTHORIZED)

    def test_health_check(self):
        response = self.client.get(reverse("health_check"))
        self.assertEqual(response.status_code, status.HTTP_200_OK)
        self.assertEqual(response.json()["status"], "healthy")


class WorldAPITests(BanditAPITestCase):
    def test_create_world(self):
        response = self.client.post(reverse("world_list"), {"name": "tiny", "seed": 3, **TINY_WORLD}, format="json")
        self.assertEqual(response.status_code, status.HTTP_201_CREATED)
        world = World.objects.get(id=response.data["id"])
        self.assertEqual(world.owner, self.user)
        self.assertEqual(world.params(), WorldParams(**TINY_WORLD))

    def test_invalid_world(self):
        response = self.client.post(
            reverse("world_list"), {"name": "bad", **TINY_WORLD, "feature_noise": 0.0}, format="json"
        )
        self.assertEqual(response.status_code, status.HTTP_400_BAD_REQUEST)

    def test_list_hides_other_users_worlds(self):
        World.objects.create(name="mine", owner=self.user, **TINY_WORLD)
        World.objects.create(name="shared", **TINY_WORLD)
        World.objects.create(name="theirs", owner=self.other, **TINY_WORLD)
        response = self.client.get(reverse("world_list"))
        names = sorted(w["name"] for w in response.data["results"])
        self.assertEqual(names, ["mine", "shared"])

    def test_detail_reports_used_keyterms(self):
        world = World.objects.create(name="mine", owner=self.user, seed=4, **TINY_WORLD)
        response = self.client.get(reverse("world_detail", args=[world.id]))
        self.assertEqual(response.status_code, status.HTTP_200_OK)
        self.assertEqual(response.data["num_keyterms_used"], generate_world(world.params(), 4).num_keyterms)

    def test_other_users_world_is_forbidden(self):
        world = World.objects.create(name="theirs", owner=self.other, **TINY_WORLD)
        response = self.client.get(reverse("world_detail", args=[world.id]))
        self.assertEqual(response.status_code, status.HTTP_403_FORBIDDEN)


class RunAPITests(BanditAPITestCase):
    def create(self, **data):
        return self.client.post(reverse("run_create"), data, format="json")

    def test_benchmark_run_stores_results(self):
        response = self.create(kind="benchmark", config=tiny_config())
        self.assertEqual(response.status_code, status.HTTP_201_CREATED)
        self.assertEqual(response.data["status"], "completed")
        run = ExperimentRun.objects.get(id=response.data["id"])
        self.assertEqual(run.owner, self.user)
        regret = run.results.filter(metric="regret")
        self.assertEqual(sorted(regret.values_list("policy", flat=True)), ["conucb", "linucb"])
        self.assertEqual(len(regret.get(policy="linucb").series), 30)
        self.assertTrue((Path(run.output_dir) / "regret.csv").exists())

    def test_run_on_stored_world(self):
        world = World.objects.create(name="mine", owner=self.user, seed=2, **TINY_WORLD)
        config = tiny_config(policies=[{"kind": "linucb"}])
        config.pop("world")
        response = self.create(world=str(world.id), config=config)
        self.assertEqual(response.status_code, status.HTTP_201_CREATED)
        self.assertEqual(response.data["config"]["world_seed"], 2)

    def test_cannot_use_other_users_world(self):
        world = World.objects.create(name="theirs", owner=self.other, **TINY_WORLD)
        response = self.create(world=str(world.id), config=tiny_config())
        self.assertEqual(response.status_code, status.HTTP_400_BAD_REQUEST)

    def test_bound_results(self):
        config = tiny_config(
            policies=[{"kind": "conucb", "params": {"lambda_": 0.5, "lambda_tilde": 25.0}}], bound=True
        )
        response = self.create(config=config)
        self.assertEqual(response.status_code, status.HTTP_201_CREATED)
        metrics = sorted(r["metric"] for r in response.data["results"])
        self.assertEqual(metrics, ["bound", "regret"])

    def test_policies_take_tuned_parameters(self):
        config = tiny_config(policies=[{"kind": "conucb", "params": {"alpha": 1.0}}])
        response = self.create(config=config)
        self.assertEqual(response.status_code, status.HTTP_201_CREATED)
        params = response.data["config"]["policies"][0]["params"]
        self.assertEqual(params, {"alpha": 1.0, "alpha_tilde": 0.25, "lambda_tilde": 0.1})

    def test_tuned_parameters_switched_off(self):
        config = tiny_config(policies=[{"kind": "conucb", "params": {"alpha": 1.0}}])
        with override_settings(BANDITS={**settings.BANDITS, "TUNED_POLICY_PARAMS": False}):
            response = self.create(config=config)
        self.assertEqual(response.data["config"]["policies"][0]["params"], {"alpha": 1.0})

    def test_bound_constraint_violation(self):
        response = self.create(config=tiny_config(bound=True))
        self.assertEqual(response.status_code, status.HTTP_400_BAD_REQUEST)

    def test_invalid_policy_parameter(self):
        response = self.create(config=tiny_config(policies=[{"kind": "conucb", "params": {"lambda_": 1.5}}]))
        self.assertEqual(response.status_code, status.HTTP_400_BAD_REQUEST)

    def test_unknown_policy_parameter(self):
        response = self.create(config=tiny_config(policies=[{"kind": "linucb", "params": {"lambda_": 0.5}}]))
        self.assertEqual(response.status_code, status.HTTP_400_BAD_REQUEST)

    def test_invalid_schedule(self):
        response = self.create(config=tiny_config(schedule="weekly:3"))
        self.assertEqual(response.status_code, status.HTTP_400_BAD_REQUEST)

    def test_too_large_for_the_api(self):
        with override_settings(BANDITS={**settings.BANDITS, "API_MAX_ROUNDS": 10}):
            response = self.create(config=tiny_config())
        self.assertEqual(response.status_code, status.HTTP_400_BAD_REQUEST)
        self.assertFalse(ExperimentRun.objects.exists())

    def test_sweep_run(self):
        response = self.create(
            kind="sweep", config=tiny_config(policies=[{"kind": "conucb"}]), schedules=["none", "log:5"]
        )
        self.assertEqual(response.status_code, status.HTTP_201_CREATED)
        policies = {r["policy"] for r in response.data["results"]}
        self.assertEqual(policies, {"conucb@none", "conucb@log:5"})

    def test_sweep_needs_schedules(self):
        response = self.create(kind="sweep", config=tiny_config())
        self.assertEqual(response.status_code, status.HTTP_400_BAD_REQUEST)

    def test_replay_run(self):
        directory = Path(self.tmp.name) / "logs"
        world = generate_world(WorldParams(**TINY_WORLD), 0)
        synthesize_logs(world, 20, np.random.default_rng(0), directory=directory)
        dataset = {
            "events": str(directory / "events.csv"),
            "features": str(directory / "features.csv"),
            "tags": str(directory / "tags.csv"),
            "pool_size": 5,
            "window": 10,
        }
        response = self.create(kind="replay", config=tiny_config(dataset=dataset))
        self.assertEqual(response.status_code, status.HTTP_201_CREATED)
        metrics = {(r["policy"], r["metric"]) for r in response.data["results"]}
        self.assertIn(("conucb", "ctr"), metrics)
        self.assertIn(("linucb", "normalized_ctr"), metrics)

    def test_failed_run_is_recorded(self):
        dataset = {"events": "/nonexistent/events.csv", "features": "/nonexistent/features.csv", "tags": "/x"}
        response = self.create(kind="replay", config=tiny_config(dataset=dataset))
        self.assertEqual(response.status_code, status.HTTP_400_BAD_REQUEST)
        self.assertIn("error", response.data)
        run = ExperimentRun.objects.get(id=response.data["run"])
        self.assertEqual(run.status, "failed")
        self.assertTrue(run.error)

    def test_list_shows_only_own_runs(self):
        ExperimentRun.objects.create(owner=self.user)
        ExperimentRun.objects.create(owner=self.other)
        response = self.client.get(reverse("run_list"))
        self.assertEqual(response.data["count"], 1)

    def test_staff_sees_all_runs(self):
        ExperimentRun.objects.create(owner=self.user)
        ExperimentRun.objects.create(owner=self.other)
        self.client.force_authenticate(self.staff)
        self.assertEqual(self.client.get(reverse("run_list")).data["count"], 2)

    def test_other_users_run_is_forbidden(self):
        run = ExperimentRun.objects.create(owner=self.other)
        response = self.client.get(reverse("run_detail", args=[run.id]))
        self.assertEqual(response.status_code, status.HTTP_403_FORBIDDEN)

    def test_run_detail_includes_results(self):
        run = ExperimentRun.objects.create(owner=self.user, status="completed")
        PolicyResult.objects.create(run=run, policy="linucb", metric="regret", final_mean=1.5, n=4, series=[0.5, 1.5])
        response = self.client.get(reverse("run_detail", args=[run.id]))
        self.assertEqual(response.data["results"][0]["series"], [0.5, 1.5])


class AdminRunTests(BanditAPITestCase):
    def test_staff_only(self):
        url = reverse("experimentrun-list")
        self.assertEqual(self.client.get(url).status_code, status.HTTP_403_FORBIDDEN)
        self.client.force_authenticate(self.staff)
        self.assertEqual(self.client.get(url).status_code, status.HTTP_200_OK)

    def test_staff_can_delete(self):
        run = ExperimentRun.objects.create(owner=self.other)
        self.client.force_authenticate(self.staff)
        response = self.client.delete(reverse("experimentrun-detail", args=[run.id]))
        self.assertEqual(response.status_code, status.HTTP_204_NO_CONTENT)
        self.assertFalse(ExperimentRun.objects.exists())

    def test_no_create_through_admin_endpoint(self):
        self.client.force_authenticate(self.staff)
        response = self.client.post(reverse("experimentrun-list"), {}, format="json")
        self.assertEqual(response.status_code, status.HTTP_405_METHOD_NOT_ALLOWED)
