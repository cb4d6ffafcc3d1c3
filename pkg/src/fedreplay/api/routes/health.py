"""Health-check endpoint `/health`."""

from fastapi import APIRouter, status

router = APIRouter()


@router.get(
	"",
	status_code=status.HTTP_200_OK,
	summary="Health",
)
def handle_health() -> dict[str, str]:
	"""Health.

	Returns:
		dict[str, str]: The service name and a static status value.

	"""
	return {"service": "fedreplay", "status": "running"}
