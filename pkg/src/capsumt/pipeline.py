"""End-to-end captioning: factual, romantic and humorous captions, then a summary."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .corpus import CorpusRecord, compose_document
from .decoding import DecodeConfig
from .features import read_features
from .maa import MaaFic
from .sfbialstm import StyledCaptioner
from .text import detokenize
from .unmhast import Summarizer

PREDICTION_FIELDS = ("factual_caption", "romantic_caption", "humorous_caption", "summary")


@dataclass
class PipelineModels:
    factual: Optional[MaaFic]
    styled: Optional[StyledCaptioner]
    summarizer: Optional[Summarizer]


def run_pipeline(record: CorpusRecord, models: PipelineModels,
                 decode: Optional[DecodeConfig] = None,
                 summary_decode: Optional[DecodeConfig] = None) -> dict:
    """Caption one record's image three ways and summarise the captions."""
    for stage, m in (("factual", models.factual), ("styled", models.styled),
                     ("summarizer", models.summarizer)):
        if m is None:
            raise ValueError(f"record {record.id!r}: missing {stage} model")
    if not record.features:
        raise ValueError(f"record {record.id!r} (line {record.line}): no feature file")
    feats = read_features(record.features)
    decode = decode or DecodeConfig()
    factual = detokenize(models.factual.generate(feats, decode))
    romantic = detokenize(models.styled.generate(feats, "romantic", decode))
    humorous = detokenize(models.styled.generate(feats, "humorous", decode))
    try:
        doc = compose_document(factual, romantic, humorous)
    except ValueError as exc:
        raise ValueError(f"record {record.id!r}: a caption stage produced no text") from exc
    summary = detokenize(models.summarizer.summarize(doc, summary_decode))
    return {"id": record.id, "factual_caption": factual, "romantic_caption": romantic,
            "humorous_caption": humorous, "summary": summary}
