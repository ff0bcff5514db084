# Generated by Django 5.2.4 on 2026-10-18 10:12

import django.core.validators
import django.db.models.deletion
import uuid
from django.conf import settings
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
        migrations.swappable_dependency(settings.AUTH_USER_MODEL),
    ]

    operations = [
        migrations.CreateModel(
            name='World',
            fields=[
                ('id', models.UUIDField(default=uuid.uuid4, editable=False, primary_key=True, serialize=False)),
                ('name', models.CharField(max_length=200)),
                ('dim', models.PositiveIntegerField(default=20, validators=[django.core.validators.MinValueValidator(1)])),
                ('num_arms', models.PositiveIntegerField(default=1000, validators=[django.core.validators.MinValueValidator(1)])),
                ('num_keyterms', models.PositiveIntegerField(default=100, validators=[django.core.validators.MinValueValidator(1)])),
                ('num_users', models.PositiveIntegerField(default=20, validators=[django.core.validators.MinValueValidator(1)])),
                ('max_keyterms_per_arm', models.PositiveIntegerField(default=5, validators=[django.core.validators.MinValueValidator(1)])),
                ('feature_noise', models.FloatField(default=0.1)),
                ('hidden_dim', models.PositiveIntegerField(default=0)),
                ('hidden_noise', models.FloatField(default=0.1)),
                ('seed', models.BigIntegerField(default=0, validators=[django.core.validators.MinValueValidator(0)])),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('updated_at', models.DateTimeField(auto_now=True)),
                ('owner', models.ForeignKey(blank=True, null=True, on_delete=django.db.models.deletion.SET_NULL, related_name='worlds', to=settings.AUTH_USER_MODEL)),
            ],
            options={
                'db_table': 'worlds',
                'ordering': ['-created_at'],
            },
        ),
        migrations.CreateModel(
            name='ExperimentRun',
            fields=[
                ('id', models.UUIDField(default=uuid.uuid4, editable=False, primary_key=True, serialize=False)),
                ('kind', models.CharField(choices=[('benchmark', 'Benchmark'), ('sweep', 'Schedule / pool-size sweep'), ('replay', 'Offline replay')], default='benchmark', max_length=20)),
                ('status', models.CharField(choices=[('pending', 'Pending'), ('running', 'Running'), ('completed', 'Completed'), ('failed', 'Failed')], default='pending', max_length=20)),
                ('config', models.JSONField(default=dict)),
                ('output_dir', models.CharField(blank=True, max_length=500)),
                ('error', models.TextField(blank=True)),
                ('finished_at', models.DateTimeField(blank=True, null=True)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('updated_at', models.DateTimeField(auto_now=True)),
                ('owner', models.ForeignKey(blank=True, null=True, on_delete=django.db.models.deletion.CASCADE, related_name='experiment_runs', to=settings.AUTH_USER_MODEL)),
                ('world', models.ForeignKey(blank=True, null=True, on_delete=django.db.models.deletion.SET_NULL, related_name='runs', to='bandits.world')),
            ],
            options={
                'db_table': 'experiment_runs',
                'ordering': ['-created_at'],
            },
        ),
        migrations.CreateModel(
            name='PolicyResult',
            fields=[
                ('id', models.UUIDField(default=uuid.uuid4, editable=False, primary_key=True, serialize=False)),
                ('policy', models.CharField(max_length=100)),
                ('metric', models.CharField(choices=[('regret', 'Cumulative regret'), ('parameter_error', 'Parameter error'), ('bound', 'Regret bound'), ('ctr', 'Replay CTR'), ('normalized_ctr', 'Normalized replay CTR')], max_length=20)),
                ('final_mean', models.FloatField(blank=True, null=True)),
                ('final_std', models.FloatField(blank=True, null=True)),
                ('n', models.PositiveIntegerField(default=0)),
                ('series', models.JSONField(default=list)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='results', to='bandits.experimentrun')),
            ],
            options={
                'db_table': 'policy_results',
                'ordering': ['policy', 'metric'],
                'constraints': [models.UniqueConstraint(fields=('run', 'policy', 'metric'), name='unique_run_policy_metric')],
            },
        ),
    ]
