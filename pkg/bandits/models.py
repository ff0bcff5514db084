from django.conf import settings
from django.db import models, transaction
from django.core.validators import MinValueValidator
from django.core.exceptions import ValidationError
from django.utils import timezone
import math
import uuid

from .exceptions import error_message
from .simulation import WorldParams, generate_world


def _json_series(values):
    """Floats for JSON storage; NaN becomes null."""
    return [None if v is None or math.isnan(v) else float(v) for v in values]


class World(models.Model):
    """
    A synthetic world, stored as generator parameters plus seed and
    regenerated on demand.
    """

    id = models.UUIDField(primary_key=True, default=uuid.uuid4, editable=False)
    owner = models.ForeignKey(
        settings.AUTH_USER_MODEL,
        on_delete=models.SET_NULL,
        related_name="worlds",
        blank=True,
        null=True,
    )
    name = models.CharField(max_length=200)
    dim = models.PositiveIntegerField(default=20, validators=[MinValueValidator(1)])
    num_arms = models.PositiveIntegerField(default=1000, validators=[MinValueValidator(1)])
    num_keyterms = models.PositiveIntegerField(default=100, validators=[MinValueValidator(1)])
    num_users = models.PositiveIntegerField(default=20, validators=[MinValueValidator(1)])
    max_keyterms_per_arm = models.PositiveIntegerField(
        default=5, validators=[MinValueValidator(1)]
    )
    feature_noise = models.FloatField(default=0.1)
    hidden_dim = models.PositiveIntegerField(default=0)
    hidden_noise = models.FloatField(default=0.1)
    seed = models.BigIntegerField(default=0, validators=[MinValueValidator(0)])
    created_at = models.DateTimeField(auto_now_add=True)
    updated_at = models.DateTimeField(auto_now=True)

    class Meta:
        db_table = "worlds"
        ordering = ["-created_at"]

    def params(self):
        return WorldParams(
            dim=self.dim,
            num_arms=self.num_arms,
            num_keyterms=self.num_keyterms,
            num_users=self.num_users,
            max_keyterms_per_arm=self.max_keyterms_per_arm,
            feature_noise=self.feature_noise,
            hidden_dim=self.hidden_dim,
            hidden_noise=self.hidden_noise,
        )

    def build(self):
        return generate_world(self.params(), self.seed)

    def clean(self):
        super().clean()
        self.params()

    def save(self, *args, **kwargs):
        self.clean()
        super().save(*args, **kwargs)

    def __str__(self):
        return f"{self.name} (d={self.dim}, N={self.num_arms}, seed={self.seed})"


class ExperimentRun(models.Model):
    KIND_CHOICES = (
        ("benchmark", "Benchmark"),
        ("sweep", "Schedule / pool-size sweep"),
        ("replay", "Offline replay"),
    )

    STATUS_CHOICES = (
        ("pending", "Pending"),
        ("running", "Running"),
        ("completed", "Completed"),
        ("failed", "Failed"),
    )

    id = models.UUIDField(primary_key=True, default=uuid.uuid4, editable=False)
    owner = models.ForeignKey(
        settings.AUTH_USER_MODEL,
        on_delete=models.CASCADE,
        related_name="experiment_runs",
        blank=True,
        null=True,
    )
    world = models.ForeignKey(
        World, on_delete=models.SET_NULL, related_name="runs", blank=True, null=True
    )
    kind = models.CharField(max_length=20, choices=KIND_CHOICES, default="benchmark")
    status = models.CharField(max_length=20, choices=STATUS_CHOICES, default="pending")
    config = models.JSONField(default=dict)
    output_dir = models.CharField(max_length=500, blank=True)
    error = models.TextField(blank=True)
    finished_at = models.DateTimeField(blank=True, null=True)
    created_at = models.DateTimeField(auto_now_add=True)
    updated_at = models.DateTimeField(auto_now=True)

    class Meta:
        db_table = "experiment_runs"
        ordering = ["-created_at"]

    def mark_running(self):
        self.status = "running"
        self.save(update_fields=["status", "updated_at"])

    def mark_failed(self, exc):
        self.status = "failed"
        self.error = error_message(exc)
        self.finished_at = timezone.now()
        self.save(update_fields=["status", "error", "finished_at", "updated_at"])

    @transaction.atomic
    def record(self, report):
        """Store one PolicyResult per (policy, metric) of ``report`` and complete the run."""
        self.results.all().delete()
        rows = []
        for policy, stats in report.regret.items():
            rows.append(PolicyResult.from_stats(self, policy, "regret", stats))
        for policy, stats in report.parameter_error.items():
            rows.append(PolicyResult.from_stats(self, policy, "parameter_error", stats))
        for policy, values in report.bound.items():
            if values is not None:
                rows.append(
                    PolicyResult(
                        run=self,
                        policy=policy,
                        metric="bound",
                        final_mean=float(values[-1]),
                        n=1,
                        series=_json_series(values),
                    )
                )
        for policy, replay_report in report.replay.items():
            ctr = replay_report.ctr
            normalized = replay_report.normalized_ctr(report.normalized.get(policy))
            matched = int(replay_report.matches.sum())
            rows.append(
                PolicyResult(
                    run=self,
                    policy=policy,
                    metric="ctr",
                    final_mean=_json_series([replay_report.overall_ctr])[0],
                    n=matched,
                    series=_json_series(ctr),
                )
            )
            rows.append(
                PolicyResult(
                    run=self,
                    policy=policy,
                    metric="normalized_ctr",
                    final_mean=_json_series([normalized[-1]])[0] if len(normalized) else None,
                    n=matched,
                    series=_json_series(normalized),
                )
            )
        PolicyResult.objects.bulk_create(rows)
        self.status = "completed"
        self.error = ""
        self.finished_at = timezone.now()
        self.save(update_fields=["status", "error", "finished_at", "updated_at"])
        return rows

    def __str__(self):
        return f"{self.kind} run {self.id} - {self.status}"


class PolicyResult(models.Model):
    METRIC_CHOICES = (
        ("regret", "Cumulative regret"),
        ("parameter_error", "Parameter error"),
        ("bound", "Regret bound"),
        ("ctr", "Replay CTR"),
        ("normalized_ctr", "Normalized replay CTR"),
    )

    id = models.UUIDField(primary_key=True, default=uuid.uuid4, editable=False)
    run = models.ForeignKey(
        ExperimentRun, on_delete=models.CASCADE, related_name="results"
    )
    policy = models.CharField(max_length=100)
    metric = models.CharField(max_length=20, choices=METRIC_CHOICES)
    final_mean = models.FloatField(blank=True, null=True)
    final_std = models.FloatField(blank=True, null=True)
    n = models.PositiveIntegerField(default=0)
    series = models.JSONField(default=list)
    created_at = models.DateTimeField(auto_now_add=True)

    class Meta:
        db_table = "policy_results"
        ordering = ["policy", "metric"]
        constraints = [
            models.UniqueConstraint(
                fields=["run", "policy", "metric"], name="unique_run_policy_metric"
            ),
        ]

    @classmethod
    def from_stats(cls, run, policy, metric, stats):
        return cls(
            run=run,
            policy=policy,
            metric=metric,
            final_mean=_json_series(stats.mean[-1:])[0] if len(stats.mean) else None,
            final_std=_json_series(stats.std[-1:])[0] if len(stats.std) else None,
            n=stats.n,
            series=_json_series(stats.mean),
        )

    def clean(self):
        super().clean()
        if self.final_std is not None and self.final_std < 0:
            raise ValidationError("Standard deviation cannot be negative.")

    def __str__(self):
        return f"{self.policy} - {self.metric} ({self.run_id})"
