"""Contains Celery tasks."""

from typing import Any

from celery import shared_task

from .backends import build_backend
from .core import AuthError, ConfigError, documents_from_data, validate_config
from .pipelines import record_to_dict, run_document


@shared_task
def run_document_task(
    rows: list[dict[str, Any]], config: dict[str, Any]
) -> dict[str, Any]:
    """Translate one document on a worker.

    The worker builds its own backend from the backend section of the
    configuration, so scripted backends must name a script file.

    Args:
        rows: the input rows of the document
        config: config-file keys of the run

    Returns:
        a dict with the serialized records and, if the document was
        aborted, a description of the failure
    """
    (document,) = documents_from_data(rows)
    pipeline_config = validate_config(config)
    try:
        with build_backend(pipeline_config.backend) as backend:
            records = run_document(document, pipeline_config, backend)
    except (AuthError, ConfigError) as e:
        return {
            "records": [],
            "failure": {
                "doc_id": document.doc_id,
                "error": type(e).__name__,
                "message": str(e),
            },
        }
    return {"records": [record_to_dict(r) for r in records], "failure": None}
