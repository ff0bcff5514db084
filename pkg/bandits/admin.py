from django.contrib import admin
from .models import World, ExperimentRun, PolicyResult


# -------------------------------
# Inlines
# -------------------------------
class PolicyResultInline(admin.TabularInline):
    model = PolicyResult
    extra = 0
    fields = ["policy", "metric", "final_mean", "final_std", "n"]
    readonly_fields = fields
    can_delete = False


# -------------------------------
# Admin Registration
# -------------------------------
@admin.register(World)
class WorldAdmin(admin.ModelAdmin):
    list_display = ["name", "dim", "num_arms", "num_keyterms", "num_users", "hidden_dim", "seed", "owner", "created_at"]
    list_filter = ["hidden_dim", "created_at"]
    search_fields = ["name", "owner__username"]
    ordering = ["-created_at"]


@admin.register(ExperimentRun)
class ExperimentRunAdmin(admin.ModelAdmin):
    list_display = ["id", "kind", "status", "owner", "world", "created_at", "finished_at"]
    list_filter = ["kind", "status", "created_at"]
    search_fields = ["id", "owner__username", "error"]
    ordering = ["-created_at"]
    readonly_fields = ["config", "output_dir", "error", "finished_at"]
    inlines = [PolicyResultInline]

    def get_queryset(self, request):
        return super().get_queryset(request).select_related("owner", "world")


@admin.register(PolicyResult)
class PolicyResultAdmin(admin.ModelAdmin):
    list_display = ["run", "policy", "metric", "final_mean", "final_std", "n"]
    list_filter = ["metric", "policy"]
    search_fields = ["policy", "run__id"]
    ordering = ["run", "policy", "metric"]
