from django.urls import path, include
from rest_framework.routers import DefaultRouter
from rest_framework_simplejwt.views import TokenRefreshView
from . import views

router = DefaultRouter()
router.register(r"admin/runs", views.AdminRunViewSet)

urlpatterns = [
    # Authentication
    path("auth/register/", views.register, name="register"),
    path("auth/login/", views.login, name="login"),
    path("auth/token/refresh/", TokenRefreshView.as_view(), name="token_refresh"),
    path("users/me/", views.get_user_profile, name="user_profile"),
    # Worlds
    path("worlds/", views.WorldListCreateView.as_view(), name="world_list"),
    path("worlds/<uuid:id>/", views.WorldDetailView.as_view(), name="world_detail"),
    # Experiment runs
    path("runs/", views.ExperimentRunListView.as_view(), name="run_list"),
    path("runs/create/", views.create_run, name="run_create"),
    path("runs/<uuid:id>/", views.ExperimentRunDetailView.as_view(), name="run_detail"),
    path("", include(router.urls)),
]
