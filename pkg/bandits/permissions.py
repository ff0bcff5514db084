from rest_framework import permissions


class IsAdmin(permissions.BasePermission):
    """
    Allow access only to staff users.
    """

    def has_permission(self, request, view):
        return request.user.is_authenticated and request.user.is_staff


class IsOwnerOrAdmin(permissions.BasePermission):
    """
    Allow access to the object owner or staff. Objects without an owner
    (created from the command line) are readable by any authenticated user.
    """

    def has_object_permission(self, request, view, obj):
        if request.user.is_staff:
            return True

        owner_id = getattr(obj, "owner_id", None)
        if owner_id is None:
            return request.method in permissions.SAFE_METHODS
        return owner_id == request.user.pk
