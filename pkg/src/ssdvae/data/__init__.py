from .corpus import (CorpusFormatError, EventDocument, parse_corpus, read_corpus,
                     serialize_document, write_corpus)
from .inc import IncSample, build_inc, read_inc, write_inc
from .synth import SyntheticSpec, default_spec, hmm_oracle_ppl, synth_generate
from .vocab import Vocabulary, build_vocab, encode_documents, mask_frames

__all__ = [
    "CorpusFormatError", "EventDocument", "IncSample", "SyntheticSpec", "Vocabulary",
    "build_inc", "build_vocab", "default_spec", "encode_documents", "hmm_oracle_ppl",
    "mask_frames", "parse_corpus", "read_corpus", "read_inc", "serialize_document",
    "synth_generate", "write_corpus", "write_inc",
]
