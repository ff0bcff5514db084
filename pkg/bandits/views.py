from rest_framework import status, generics, viewsets
from rest_framework.decorators import api_view, permission_classes
from rest_framework.response import Response
from rest_framework.permissions import AllowAny, IsAuthenticated
from rest_framework_simplejwt.tokens import RefreshToken
from django.db.models import Q
from django.db import transaction
import logging

# Configure logging
logger = logging.getLogger(__name__)


from .exceptions import error_message
from .models import ExperimentRun, World
from .runs import BANDIT_ERRORS, default_output_dir, execute_run
from .serializers import (
    UserSerializer,
    RegisterSerializer,
    LoginSerializer,
    WorldSerializer,
    ExperimentRunSerializer,
    ExperimentRunCreateSerializer,
)
from .permissions import IsAdmin, IsOwnerOrAdmin


def _tokens(user):
    refresh = RefreshToken.for_user(user)
    return {"refresh": str(refresh), "access": str(refresh.access_token)}


@api_view(["POST"])
@permission_classes([AllowAny])
def register(request):
    serializer = RegisterSerializer(data=request.data)
    if not serializer.is_valid():
        logger.error(f"Registration validation failed: {serializer.errors}")
        return Response(serializer.errors, status=status.HTTP_400_BAD_REQUEST)

    with transaction.atomic():
        user = serializer.save()
    logger.info(f"User created successfully: {user.username}")
    return Response(
        {
            "message": "Registration successful",
            "user": UserSerializer(user).data,
            "tokens": _tokens(user),
        },
        status=status.HTTP_201_CREATED,
    )


@api_view(["POST"])
@permission_classes([AllowAny])
def login(request):
    serializer = LoginSerializer(data=request.data)
    if serializer.is_valid():
        user = serializer.validated_data["user"]
        return Response(
            {
                "message": "Login successful",
                "user": UserSerializer(user).data,
                "tokens": _tokens(user),
            },
            status=status.HTTP_200_OK,
        )
    return Response(serializer.errors, status=status.HTTP_400_BAD_REQUEST)


@api_view(["GET"])
@permission_classes([IsAuthenticated])
def get_user_profile(request):
    return Response(UserSerializer(request.user).data)


def _visible_to(user, queryset):
    if user.is_staff:
        return queryset
    return queryset.filter(Q(owner=user) | Q(owner__isnull=True))


class WorldListCreateView(generics.ListCreateAPIView):
    serializer_class = WorldSerializer
    permission_classes = [IsAuthenticated]

    def get_queryset(self):
        return _visible_to(self.request.user, World.objects.all())

    def perform_create(self, serializer):
        world = serializer.save(owner=self.request.user)
        logger.info(f"World {world.id} created by {self.request.user.username}")


class WorldDetailView(generics.RetrieveAPIView):
    serializer_class = WorldSerializer
    permission_classes = [IsAuthenticated, IsOwnerOrAdmin]
    queryset = World.objects.all()
    lookup_field = "id"

    def get_serializer_context(self):
        context = super().get_serializer_context()
        context["detail"] = True
        return context


class ExperimentRunListView(generics.ListAPIView):
    serializer_class = ExperimentRunSerializer
    permission_classes = [IsAuthenticated]

    def get_queryset(self):
        runs = ExperimentRun.objects.select_related("owner").prefetch_related("results")
        if self.request.user.is_staff:
            return runs
        return runs.filter(owner=self.request.user)


class ExperimentRunDetailView(generics.RetrieveAPIView):
    serializer_class = ExperimentRunSerializer
    permission_classes = [IsAuthenticated, IsOwnerOrAdmin]
    queryset = ExperimentRun.objects.prefetch_related("results")
    lookup_field = "id"


@api_view(["POST"])
@permission_classes([IsAuthenticated])
def create_run(request):
    """Validate an experiment, run it synchronously and return the stored results."""
    serializer = ExperimentRunCreateSerializer(data=request.data, context={"request": request})
    if not serializer.is_valid():
        return Response(serializer.errors, status=status.HTTP_400_BAD_REQUEST)

    data = serializer.validated_data
    config = data["experiment"]
    world = data.get("world")
    run = ExperimentRun.objects.create(
        owner=request.user,
        world=world,
        kind=data["kind"],
        config=config.to_dict(),
    )
    logger.info(f"Run {run.id} ({run.kind}) started by {request.user.username}")
    try:
        execute_run(
            run,
            config,
            schedules=data["schedule_list"],
            world=world.build() if world is not None else None,
            output_dir=default_output_dir(run),
        )
    except BANDIT_ERRORS as exc:
        return Response(
            {"error": error_message(exc), "run": str(run.id)},
            status=status.HTTP_400_BAD_REQUEST,
        )
    run.refresh_from_db()
    return Response(ExperimentRunSerializer(run).data, status=status.HTTP_201_CREATED)


class AdminRunViewSet(viewsets.ModelViewSet):
    serializer_class = ExperimentRunSerializer
    permission_classes = [IsAdmin]
    queryset = ExperimentRun.objects.all()
    http_method_names = ["get", "delete", "head", "options"]
