from rest_framework import serializers
from django.conf import settings
from django.contrib.auth import authenticate, get_user_model
from django.contrib.auth.password_validation import validate_password

from .benchmark import (
    CONUCB_KINDS,
    DEFAULT_POLICY_KINDS,
    HIDDEN_KINDS,
    POLICY_KINDS,
    DatasetSpec,
    ExperimentConfig,
    PolicySpec,
)
from .domain import ConversationSchedule
from .exceptions import ConfigurationError, error_message
from .models import ExperimentRun, PolicyResult, World
from .simulation import WorldParams

User = get_user_model()

# Hyperparameters each policy family understands.
LINUCB_PARAMS = {"ridge", "sigma", "alpha", "noise_scale", "theta_norm"}
CONUCB_PARAMS = {"lambda_", "lambda_tilde", "sigma", "alpha", "alpha_tilde", "theta_tilde_norm"}
HIDDEN_PARAMS = {"hidden_dim", "hidden_ridge", "hidden_noise"}
POLICY_PARAMS = {
    "linucb": LINUCB_PARAMS,
    "armcon": LINUCB_PARAMS,
    "hlinucb": LINUCB_PARAMS | HIDDEN_PARAMS,
    "harmcon": LINUCB_PARAMS | HIDDEN_PARAMS,
    "conucb": CONUCB_PARAMS,
    "var_rs": CONUCB_PARAMS,
    "var_mrc": CONUCB_PARAMS,
    "var_lcr": CONUCB_PARAMS,
    "hconucb": CONUCB_PARAMS | HIDDEN_PARAMS,
    "random": set(),
    "oracle": set(),
}


def _open_interval(name, value, low=0.0, high=1.0):
    if not low < value < high:
        raise serializers.ValidationError({name: f"Must lie strictly between {low} and {high}."})


class UserSerializer(serializers.ModelSerializer):
    class Meta:
        model = User
        fields = ["id", "username", "email", "first_name", "last_name", "is_staff", "date_joined"]
        read_only_fields = ["id", "is_staff", "date_joined"]


class RegisterSerializer(serializers.ModelSerializer):
    password = serializers.CharField(
        write_only=True, required=True, validators=[validate_password]
    )
    password2 = serializers.CharField(write_only=True, required=True)

    class Meta:
        model = User
        fields = ["username", "email", "password", "password2", "first_name", "last_name"]

    def validate(self, attrs):
        if attrs["password"] != attrs["password2"]:
            raise serializers.ValidationError(
                {"password": "Password fields didn't match."}
            )
        return attrs

    def create(self, validated_data):
        validated_data.pop("password2")
        return User.objects.create_user(**validated_data)


class LoginSerializer(serializers.Serializer):
    username = serializers.CharField()
    password = serializers.CharField()

    def validate(self, attrs):
        user = authenticate(username=attrs.get("username"), password=attrs.get("password"))
        if not user:
            raise serializers.ValidationError("Invalid credentials.")
        if not user.is_active:
            raise serializers.ValidationError("User account is disabled.")
        attrs["user"] = user
        return attrs


class WorldParamsSerializer(serializers.Serializer):
    dim = serializers.IntegerField(min_value=1, required=False)
    num_arms = serializers.IntegerField(min_value=1, required=False)
    num_keyterms = serializers.IntegerField(min_value=1, required=False)
    num_users = serializers.IntegerField(min_value=1, required=False)
    max_keyterms_per_arm = serializers.IntegerField(min_value=1, required=False)
    feature_noise = serializers.FloatField(required=False)
    hidden_dim = serializers.IntegerField(min_value=0, required=False)
    hidden_noise = serializers.FloatField(min_value=0.0, required=False)

    def validate_feature_noise(self, value):
        if value <= 0:
            raise serializers.ValidationError("sigma_g must be positive.")
        return value


class ScheduleSerializer(serializers.Serializer):
    """
    A conversation schedule, written either compactly (``none``, ``log:5``,
    ``linear:5:50``) or as ``{"kind", "questions", "period"}``.
    """

    kind = serializers.ChoiceField(choices=ConversationSchedule.KINDS)
    questions = serializers.IntegerField(min_value=0, default=5)
    period = serializers.IntegerField(min_value=1, default=50)

    def to_internal_value(self, data):
        if isinstance(data, str):
            try:
                return ConversationSchedule.parse(data)
            except ConfigurationError as exc:
                raise serializers.ValidationError(error_message(exc))
        attrs = super().to_internal_value(data)
        try:
            return ConversationSchedule(**attrs)
        except ConfigurationError as exc:
            raise serializers.ValidationError(error_message(exc))

    def to_representation(self, instance):
        return instance.label


class PolicySpecSerializer(serializers.Serializer):
    kind = serializers.ChoiceField(choices=sorted(POLICY_KINDS))
    name = serializers.CharField(max_length=100, required=False, allow_null=True)
    params = serializers.DictField(child=serializers.FloatField(), required=False, default=dict)

    def validate(self, attrs):
        params = attrs.get("params", {})
        unknown = set(params) - POLICY_PARAMS[attrs["kind"]]
        if unknown:
            raise serializers.ValidationError(
                {"params": f"Unknown parameters for {attrs['kind']}: {', '.join(sorted(unknown))}."}
            )
        if "lambda_" in params:
            _open_interval("lambda_", params["lambda_"])
        if "sigma" in params:
            _open_interval("sigma", params["sigma"])
        for key in ("lambda_tilde", "ridge", "hidden_ridge"):
            if key in params and params[key] <= 0:
                raise serializers.ValidationError({key: "Must be positive."})
        for key in ("alpha", "alpha_tilde", "theta_tilde_norm", "theta_norm", "hidden_dim"):
            if key in params and params[key] < 0:
                raise serializers.ValidationError({key: "Must be nonnegative."})
        if "hidden_dim" in params:
            params["hidden_dim"] = int(params["hidden_dim"])
        if settings.BANDITS["TUNED_POLICY_PARAMS"]:
            return PolicySpec.tuned(attrs["kind"], name=attrs.get("name"), **params)
        return PolicySpec(kind=attrs["kind"], name=attrs.get("name"), params=params)


class DatasetSerializer(serializers.Serializer):
    events = serializers.CharField()
    features = serializers.CharField()
    tags = serializers.CharField(required=False, allow_null=True)
    pool_size = serializers.IntegerField(min_value=1, default=50)
    ridge = serializers.FloatField(default=1.0)
    window = serializers.IntegerField(min_value=1, default=500)
    binary_feedback = serializers.BooleanField(default=False)
    normalize_by = serializers.CharField(required=False, allow_null=True)

    def validate_ridge(self, value):
        if value <= 0:
            raise serializers.ValidationError("Ridge coefficient must be positive.")
        return value

    def validate(self, attrs):
        return DatasetSpec(**attrs)


class ExperimentConfigSerializer(serializers.Serializer):
    """
    Validates an experiment document and turns it into an ExperimentConfig,
    available as ``validated_data["experiment"]``.
    """

    preset = serializers.ChoiceField(choices=["desk", "full"], default="desk")
    world = WorldParamsSerializer(required=False)
    world_seed = serializers.IntegerField(min_value=0, default=0)
    policies = PolicySpecSerializer(many=True, required=False)
    schedule = ScheduleSerializer(required=False)
    horizon = serializers.IntegerField(min_value=1, default=2000)
    slate_size = serializers.IntegerField(min_value=1, default=50)
    seeds = serializers.ListField(
        child=serializers.IntegerField(min_value=0), min_length=1, required=False
    )
    users = serializers.IntegerField(min_value=1, required=False, allow_null=True)
    binary = serializers.BooleanField(default=False)
    bound = serializers.BooleanField(default=False)
    workers = serializers.IntegerField(min_value=1, required=False)
    verbose = serializers.BooleanField(default=False)
    dataset = DatasetSerializer(required=False, allow_null=True)

    def validate(self, attrs):
        presets = settings.BANDITS
        world = dict(presets["FULL_SCALE" if attrs["preset"] == "full" else "DESK_SCALE"])
        world.update(attrs.get("world") or {})
        policies = attrs.get("policies")
        dataset = attrs.get("dataset")
        if dataset is not None and not dataset.tags:
            needs_tags = [p.label for p in policies or [] if p.kind in CONUCB_KINDS]
            if needs_tags or policies is None:
                raise serializers.ValidationError(
                    {"dataset": "Conversational policies need a tag file in replay mode."}
                )
        try:
            config = ExperimentConfig(
                world=WorldParams(**world),
                world_seed=attrs["world_seed"],
                schedule=attrs.get("schedule") or ConversationSchedule(),
                horizon=attrs["horizon"],
                slate_size=attrs["slate_size"],
                users=attrs.get("users"),
                binary=attrs["binary"],
                bound=attrs["bound"],
                workers=attrs.get("workers") or presets["WORKERS"],
                verbose=attrs["verbose"],
                dataset=dataset,
            )
            if policies is not None:
                config.policies = policies
            elif not presets["TUNED_POLICY_PARAMS"]:
                config.policies = [PolicySpec(kind) for kind in DEFAULT_POLICY_KINDS]
            if "seeds" in attrs:
                config.seeds = tuple(attrs["seeds"])
            config.validate()
        except ConfigurationError as exc:
            raise serializers.ValidationError(error_message(exc))
        if any(p.kind in HIDDEN_KINDS for p in config.policies) and dataset is not None:
            raise serializers.ValidationError(
                {"policies": "Hidden-feature policies are only available on synthetic worlds."}
            )
        attrs["experiment"] = config
        return attrs


def parse_experiment_config(data):
    """Validate an experiment document; raises ConfigurationError on bad input."""
    serializer = ExperimentConfigSerializer(data=data)
    if not serializer.is_valid():
        raise ConfigurationError(flatten_errors(serializer.errors))
    return serializer.validated_data["experiment"]


def flatten_errors(errors, prefix=""):
    if isinstance(errors, dict):
        parts = [flatten_errors(v, f"{prefix}{k}." if k != "non_field_errors" else prefix) for k, v in errors.items()]
        return "; ".join(p for p in parts if p)
    if isinstance(errors, list):
        return "; ".join(flatten_errors(e, prefix) for e in errors if e)
    return f"{prefix.rstrip('.')}: {errors}" if prefix else str(errors)


class WorldSerializer(serializers.ModelSerializer):
    num_keyterms_used = serializers.SerializerMethodField()

    class Meta:
        model = World
        fields = "__all__"
        read_only_fields = ["id", "owner", "created_at", "updated_at"]

    def get_num_keyterms_used(self, obj):
        # Generated worlds drop key-terms that no arm sampled.
        if not self.context.get("detail"):
            return None
        return obj.build().num_keyterms

    def validate(self, attrs):
        params = {
            field: attrs.get(
                field, getattr(self.instance, field, World._meta.get_field(field).default)
            )
            for field in WorldParams.__dataclass_fields__
        }
        try:
            WorldParams(**params)
        except ConfigurationError as exc:
            raise serializers.ValidationError(error_message(exc))
        return attrs


class PolicyResultSerializer(serializers.ModelSerializer):
    class Meta:
        model = PolicyResult
        fields = ["id", "policy", "metric", "final_mean", "final_std", "n", "series"]
        read_only_fields = fields


class ExperimentRunSerializer(serializers.ModelSerializer):
    owner = UserSerializer(read_only=True)
    results = PolicyResultSerializer(many=True, read_only=True)

    class Meta:
        model = ExperimentRun
        fields = "__all__"
        read_only_fields = [
            "id",
            "owner",
            "status",
            "output_dir",
            "error",
            "finished_at",
            "created_at",
            "updated_at",
        ]


class ExperimentRunCreateSerializer(serializers.Serializer):
    kind = serializers.ChoiceField(choices=ExperimentRun.KIND_CHOICES, default="benchmark")
    world = serializers.PrimaryKeyRelatedField(
        queryset=World.objects.all(), required=False, allow_null=True
    )
    config = serializers.JSONField(default=dict)
    schedules = serializers.ListField(child=serializers.CharField(), required=False)

    def validate_world(self, value):
        request = self.context.get("request")
        if value is None or request is None or request.user.is_staff:
            return value
        if value.owner_id not in (None, request.user.pk):
            raise serializers.ValidationError("World not found.")
        return value

    def validate(self, attrs):
        data = dict(attrs["config"])
        world = attrs.get("world")
        if world is not None:
            data["world"] = {f: getattr(world, f) for f in WorldParams.__dataclass_fields__}
            data["world_seed"] = world.seed
        config_serializer = ExperimentConfigSerializer(data=data)
        if not config_serializer.is_valid():
            raise serializers.ValidationError({"config": config_serializer.errors})
        config = config_serializer.validated_data["experiment"]

        kind = attrs["kind"]
        if kind == "replay" and config.dataset is None:
            raise serializers.ValidationError({"config": "Replay runs need a dataset section."})
        if kind != "replay" and config.dataset is not None:
            raise serializers.ValidationError({"kind": "A dataset section requires kind 'replay'."})
        schedules = []
        if kind == "sweep":
            if not attrs.get("schedules"):
                raise serializers.ValidationError({"schedules": "A sweep needs a list of schedules."})
            for text in attrs["schedules"]:
                try:
                    schedules.append(ConversationSchedule.parse(text))
                except ConfigurationError as exc:
                    raise serializers.ValidationError({"schedules": error_message(exc)})

        if kind != "replay":
            users = config.users or config.world.num_users
            rounds = len(config.policies) * len(config.seeds) * users * config.horizon
            rounds *= max(len(schedules), 1)
            limit = settings.BANDITS["API_MAX_ROUNDS"]
            if rounds > limit:
                raise serializers.ValidationError(
                    f"Experiment needs {rounds} policy rounds; the API runs at most {limit}. "
                    "Use the run management command for larger experiments."
                )
        attrs["experiment"] = config
        attrs["schedule_list"] = schedules
        return attrs
