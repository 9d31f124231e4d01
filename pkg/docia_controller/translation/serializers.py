"""Contains serialising routines for configs, corpus lines and run outputs."""
from collections.abc import Mapping
from typing import Any

from django.conf import settings
from django.utils.translation import gettext_lazy as gettext
from overrides import overrides
from rest_framework.exceptions import ValidationError
from rest_framework.fields import (
    BooleanField,
    CharField,
    ChoiceField,
    DictField,
    FloatField,
    IntegerField,
    ListField,
)
from rest_framework.serializers import Serializer

from .core import (
    STAGE_ALIASES,
    Ablation,
    BackendConfig,
    BackendKind,
    ContextMode,
    GateDecision,
    Mode,
    PipelineConfig,
    PromptRole,
    ScriptRule,
    SegmentFailure,
    SegmentId,
    SegmentInput,
    SegmentRecord,
    SimilarityKind,
    Stage,
    Task,
)

PIPELINE_DEFAULTS: dict[str, Any] = {
    "mode": Mode.DOCIA,
    "context_mode": ContextMode.ONLINE,
    "L": 6,
    "m": 3,
    "n": 3,
    "lambda": 0.7,
    "lambda_mt": None,
    "ablations": [],
    "source_lang": "en",
    "target_lang": "de",
    "parallel_documents": 1,
    "similarity": SimilarityKind.INDEL,
    "bm25_k1": 1.2,
    "bm25_b": 0.75,
    "bm25_stemming": False,
    "bm25_stopwords": [],
    "prompt_role": PromptRole.USER,
}
"""Defaults of the config-file keys (overridable by DOCIA_PIPELINE_DEFAULTS)."""


def _pipeline_defaults() -> dict[str, Any]:
    return {**PIPELINE_DEFAULTS, **getattr(settings, "DOCIA_PIPELINE_DEFAULTS", {})}


def _backend_defaults() -> dict[str, Any]:
    return {
        **BackendConfig().to_dict(),
        **getattr(settings, "DOCIA_BACKEND_DEFAULTS", {}),
    }


class StageListField(ListField):
    """List of stages; accepts a comma-separated string and short aliases."""

    child = ChoiceField(choices=Stage.choices)

    @overrides
    def to_internal_value(self, data: Any) -> list[str]:
        if isinstance(data, str):
            data = [s for s in (p.strip() for p in data.split(",")) if s]
        if isinstance(data, list | tuple | set | frozenset):
            data = [STAGE_ALIASES.get(s, s) if isinstance(s, str) else s for s in data]
        return super().to_internal_value(data)


class AblationListField(ListField):
    """List of ablations; accepts a comma-separated string."""

    child = ChoiceField(choices=Ablation.choices)

    @overrides
    def to_internal_value(self, data: Any) -> list[str]:
        if isinstance(data, str):
            data = [s for s in (p.strip() for p in data.split(",")) if s]
        if isinstance(data, set | frozenset):
            data = sorted(data)
        return super().to_internal_value(data)


class BackendConfigSerializer(Serializer):
    """Backend section of the config file."""

    kind = ChoiceField(choices=BackendKind.choices, required=False)
    endpoint_url = CharField(required=False)
    model_name = CharField(required=False)
    credentials_env_var = CharField(required=False)
    timeout = FloatField(required=False, help_text=gettext("seconds per request"))
    max_retries = IntegerField(min_value=0, required=False)
    backoff_initial = FloatField(min_value=0, required=False)
    backoff_multiplier = FloatField(min_value=1, required=False)
    temperature = FloatField(min_value=0, required=False)
    max_output_tokens = IntegerField(min_value=1, required=False)
    concurrency_limit = IntegerField(min_value=1, required=False)
    script = CharField(required=False, allow_null=True)

    @overrides
    def validate(self, attrs: dict[str, Any]) -> dict[str, Any]:
        resolved = {**_backend_defaults(), **attrs}
        if resolved["timeout"] <= 0:
            raise ValidationError({"timeout": gettext("must be positive")})
        return resolved

    @staticmethod
    def build(data: dict[str, Any]) -> BackendConfig:
        """Create the backend config from validated data.

        Args:
            data: validated data

        Returns:
            the backend config
        """
        return BackendConfig(
            kind=BackendKind(data["kind"]),
            endpoint_url=data["endpoint_url"],
            model_name=data["model_name"],
            credentials_env_var=data["credentials_env_var"],
            timeout=float(data["timeout"]),
            max_retries=int(data["max_retries"]),
            backoff_initial=float(data["backoff_initial"]),
            backoff_multiplier=float(data["backoff_multiplier"]),
            temperature=float(data["temperature"]),
            max_output_tokens=int(data["max_output_tokens"]),
            concurrency_limit=int(data["concurrency_limit"]),
            script=data["script"],
        )


class PipelineConfigSerializer(Serializer):
    """Flat config document whose keys mirror PipelineConfig."""

    mode = ChoiceField(choices=Mode.choices, required=False)
    stages = StageListField(required=False)
    context_mode = ChoiceField(choices=ContextMode.choices, required=False)
    L = IntegerField(  # noqa: N815
        min_value=0, required=False, help_text=gettext("context window size")
    )
    m = IntegerField(
        min_value=0, required=False, help_text=gettext("short-memory segments")
    )
    n = IntegerField(
        min_value=0, required=False, help_text=gettext("long-memory segments")
    )
    lambda_mt = FloatField(min_value=0, max_value=1, required=False, allow_null=True)
    ablations = AblationListField(required=False)
    source_lang = CharField(required=False)
    target_lang = CharField(required=False)
    parallel_documents = IntegerField(min_value=1, required=False)
    similarity = ChoiceField(choices=SimilarityKind.choices, required=False)
    bm25_k1 = FloatField(min_value=0, required=False)
    bm25_b = FloatField(min_value=0, max_value=1, required=False)
    bm25_stemming = BooleanField(required=False)
    bm25_stopwords = ListField(child=CharField(), required=False)
    prompt_role = ChoiceField(choices=PromptRole.choices, required=False)
    backend = BackendConfigSerializer(required=False)

    @overrides
    def get_fields(self) -> dict[str, Any]:
        fields = super().get_fields()
        # "lambda" is a keyword, so it cannot be declared as a class attribute
        fields["lambda"] = FloatField(
            min_value=0,
            max_value=1,
            required=False,
            help_text=gettext("refinement threshold"),
        )
        return fields

    @overrides
    def validate(self, attrs: dict[str, Any]) -> dict[str, Any]:
        initial = getattr(self, "initial_data", {})
        _reject_unknown_keys(initial, self.fields)
        if isinstance(initial.get("backend"), dict):
            _reject_unknown_keys(
                initial["backend"], BackendConfigSerializer().fields, "backend."
            )
        defaults = _pipeline_defaults()
        resolved = {**defaults, **{k: v for k, v in attrs.items() if k != "backend"}}
        resolved["backend"] = attrs.get("backend") or BackendConfigSerializer(
            data={}
        ).run_validation({})

        mode = Mode(resolved["mode"])
        default_stages = list(Stage) if mode == Mode.DOCIA else []
        stages = set(attrs.get("stages", default_stages))
        if mode != Mode.DOCIA and stages:
            raise ValidationError(
                {"stages": gettext("baseline modes do not run context-aware stages")}
            )
        if mode == Mode.DOCIA and not stages:
            raise ValidationError(
                {"stages": gettext("docia mode needs at least one stage")}
            )
        resolved["stages"] = sorted(stages)

        ablations = set(attrs.get("ablations", resolved["ablations"]))
        if ablations and mode != Mode.DOCIA:
            raise ValidationError(
                {"ablations": gettext("ablations only apply to docia mode")}
            )
        if {Ablation.NO_SHORT_CTX, Ablation.NO_LONG_CTX} <= ablations:
            raise ValidationError(
                {"ablations": gettext("cannot disable both context levels")}
            )
        resolved["ablations"] = sorted(ablations)

        resolved["L"], resolved["m"], resolved["n"] = _window_split(attrs, defaults)
        overridden = bool(ablations & {Ablation.NO_SHORT_CTX, Ablation.NO_LONG_CTX})
        if not overridden and resolved["m"] + resolved["n"] != resolved["L"]:
            raise ValidationError(
                {
                    "L": gettext("L must equal m + n (got L=%(L)d, m=%(m)d, n=%(n)d)")
                    % {"L": resolved["L"], "m": resolved["m"], "n": resolved["n"]}
                }
            )
        return resolved

    def to_config(self) -> PipelineConfig:
        """Create the pipeline config from the validated data.

        Returns:
            the validated configuration
        """
        data = self.validated_data
        return PipelineConfig(
            mode=Mode(data["mode"]),
            stages=frozenset(Stage(s) for s in data["stages"]),
            context_mode=ContextMode(data["context_mode"]),
            window=int(data["L"]),
            short_window=int(data["m"]),
            long_window=int(data["n"]),
            threshold=float(data["lambda"]),
            threshold_mt=(
                None if data["lambda_mt"] is None else float(data["lambda_mt"])
            ),
            ablations=frozenset(Ablation(a) for a in data["ablations"]),
            source_lang=data["source_lang"],
            target_lang=data["target_lang"],
            backend=BackendConfigSerializer.build(data["backend"]),
            parallel_documents=int(data["parallel_documents"]),
            similarity=SimilarityKind(data["similarity"]),
            bm25_k1=float(data["bm25_k1"]),
            bm25_b=float(data["bm25_b"]),
            bm25_stemming=bool(data["bm25_stemming"]),
            bm25_stopwords=tuple(data["bm25_stopwords"]),
            prompt_role=PromptRole(data["prompt_role"]),
        )


def _window_split(
    attrs: dict[str, Any], defaults: dict[str, Any]
) -> tuple[int, int, int]:
    given = {k for k in ("L", "m", "n") if k in attrs}
    window, short, long = (attrs.get(k) for k in ("L", "m", "n"))
    if given == {"L"}:
        return window, window - window // 2, window // 2
    if given == {"m", "n"}:
        return short + long, short, long
    if given == {"L", "m"}:
        return window, short, max(window - short, 0)
    if given == {"L", "n"}:
        return window, max(window - long, 0), long
    return (
        defaults["L"] if window is None else window,
        defaults["m"] if short is None else short,
        defaults["n"] if long is None else long,
    )


def _reject_unknown_keys(
    initial: Any, fields: Mapping[str, Any], prefix: str = ""
) -> None:
    if not isinstance(initial, Mapping):
        return
    unknown = sorted(set(initial) - set(fields))
    if unknown:
        raise ValidationError(
            {f"{prefix}{k}": gettext("unknown configuration key") for k in unknown}
        )


class SegmentInputSerializer(Serializer):
    """One line of the input corpus."""

    doc_id = CharField(
        trim_whitespace=False, help_text=gettext("document (talk) id")
    )
    index = IntegerField(min_value=1, help_text=gettext("1-based segment position"))
    draft_transcript = CharField(allow_blank=True, trim_whitespace=False)
    ref_transcript = CharField(
        required=False, allow_null=True, allow_blank=True, trim_whitespace=False
    )
    ref_translation = CharField(
        required=False, allow_null=True, allow_blank=True, trim_whitespace=False
    )

    def to_segment(self) -> tuple[str, SegmentInput]:
        """Create the segment from the validated data.

        Returns:
            a tuple (document id, segment)
        """
        data = self.validated_data
        return data["doc_id"], SegmentInput(
            index=data["index"],
            draft_transcript=data["draft_transcript"],
            ref_transcript=data.get("ref_transcript"),
            ref_translation=data.get("ref_translation"),
        )


class GateDecisionSerializer(Serializer):
    """Gate decision as written to the output."""

    similarity = FloatField(min_value=0, max_value=1)
    accepted = BooleanField()
    threshold = FloatField(source="threshold_used")
    fallback = BooleanField(default=False)
    ablated = BooleanField(default=False)


class SegmentFailureSerializer(Serializer):
    """Failure as written to the output."""

    stage = CharField()
    error = CharField()
    message = CharField(allow_blank=True, trim_whitespace=False)
    fatal = BooleanField(default=False)


class SegmentRecordSerializer(Serializer):
    """One line of the output JSONL.

    Stage timings are not serialised, so that outputs are reproducible.
    """

    doc_id = CharField(source="id.doc_id", trim_whitespace=False)
    index = IntegerField(source="id.index", min_value=1)
    draft_transcript = CharField(allow_blank=True, trim_whitespace=False)
    refined_transcript = CharField(allow_blank=True, trim_whitespace=False)
    asr_gate = GateDecisionSerializer(allow_null=True)
    draft_translation = CharField(allow_blank=True, trim_whitespace=False)
    final_translation = CharField(allow_blank=True, trim_whitespace=False)
    mt_gate = GateDecisionSerializer(allow_null=True)
    llm_calls = IntegerField(min_value=0)
    extra_calls = IntegerField(min_value=0, default=0)
    skipped = BooleanField(default=False)
    failures = SegmentFailureSerializer(many=True)
    context_fingerprints = DictField(child=CharField())

    def to_record(self) -> SegmentRecord:
        """Create the record from the validated data.

        Returns:
            the segment record
        """
        data = self.validated_data
        return SegmentRecord(
            id=SegmentId(data["id"]["doc_id"], data["id"]["index"]),
            draft_transcript=data["draft_transcript"],
            refined_transcript=data["refined_transcript"],
            draft_translation=data["draft_translation"],
            final_translation=data["final_translation"],
            asr_gate=_decision(data["asr_gate"]),
            mt_gate=_decision(data["mt_gate"]),
            llm_calls=data["llm_calls"],
            extra_calls=data["extra_calls"],
            failures=tuple(SegmentFailure(**f) for f in data["failures"]),
            skipped=data["skipped"],
            context_fingerprints=dict(data["context_fingerprints"]),
        )


def _decision(data: dict[str, Any] | None) -> GateDecision | None:
    if data is None:
        return None
    return GateDecision(
        similarity=data["similarity"],
        accepted=data["accepted"],
        threshold_used=data["threshold_used"],
        fallback=data["fallback"],
        ablated=data["ablated"],
    )


class ScriptEntrySerializer(Serializer):
    """One entry of a scripted-backend script.

    The rule is inferred from the keys when it is not given: ``reply`` implies
    the reply rule, ``replies`` the queue rule and ``table`` the map rule.
    """

    task = ChoiceField(choices=Task.choices, required=False, allow_null=True)
    doc_id = CharField(required=False, allow_null=True, trim_whitespace=False)
    index = IntegerField(min_value=1, required=False, allow_null=True)
    rule = ChoiceField(choices=ScriptRule.choices, required=False)
    reply = CharField(required=False, allow_blank=True, trim_whitespace=False)
    replies = ListField(
        child=CharField(allow_blank=True, trim_whitespace=False), required=False
    )
    table = DictField(
        child=CharField(allow_blank=True, trim_whitespace=False), required=False
    )
    raw = BooleanField(default=False)

    @overrides
    def validate(self, attrs: dict[str, Any]) -> dict[str, Any]:
        _reject_unknown_keys(getattr(self, "initial_data", None), self.fields)
        rule = attrs.get("rule")
        if rule is None:
            for key, implied in (
                ("reply", ScriptRule.REPLY),
                ("replies", ScriptRule.QUEUE),
                ("table", ScriptRule.MAP),
            ):
                if key in attrs:
                    rule = implied
                    break
            else:
                raise ValidationError({"rule": gettext("missing rule or reply")})
        required = {
            ScriptRule.REPLY: "reply",
            ScriptRule.QUEUE: "replies",
            ScriptRule.MAP: "table",
        }.get(ScriptRule(rule))
        if required and required not in attrs:
            raise ValidationError({required: gettext("required by the rule")})
        return {
            "task": attrs.get("task"),
            "doc_id": attrs.get("doc_id"),
            "index": attrs.get("index"),
            "rule": ScriptRule(rule),
            "reply": attrs.get("reply", ""),
            "replies": list(attrs.get("replies", [])),
            "table": dict(attrs.get("table", {})),
            "raw": attrs.get("raw", False),
        }
