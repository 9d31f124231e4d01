import os
import unittest

from django.test import SimpleTestCase

from ..backends import HttpBackend
from ..core import BackendConfig, validate_config
from ..pipelines import run_document
from . import corpus

ENDPOINT = os.environ.get("DOCIA_LIVE_ENDPOINT")


@unittest.skipUnless(
    ENDPOINT and os.environ.get("DOCIA_API_KEY"),
    "set DOCIA_LIVE_ENDPOINT and DOCIA_API_KEY to call a real endpoint",
)
class LiveBackendTest(SimpleTestCase):
    def test_full_pipeline(self) -> None:
        config = BackendConfig(
            endpoint_url=ENDPOINT,
            model_name=os.environ.get("DOCIA_LIVE_MODEL", "gpt-4o-mini"),
            max_retries=1,
        )
        (document,) = corpus(
            (
                "live",
                [
                    "so um the bank approved the the loan yesterday",
                    "the loan has a low interest rate",
                    "and uh the bank will pay it out next week",
                ],
            )
        )
        with HttpBackend(config) as backend:
            records = run_document(document, validate_config({}), backend)
        assert not any(r.failed for r in records)
        assert all(r.final_translation for r in records)
